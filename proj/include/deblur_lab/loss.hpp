#pragma once

// Training losses over differentiable predictions.
//
//   total = alpha*MAE + beta*MSE + gamma*Perceptual + delta*(1 - SSIM)
//
// The perceptual term compares features of a fixed, randomly initialized
// three-stage conv stack (3->16->32->64, 3x3, stride 2, ReLU).

#include <array>
#include <cstdint>
#include <vector>

#include "deblur_lab/image.hpp"
#include "deblur_lab/tensor.hpp"

namespace deblur {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.1;
  double delta = 0.5;

  void validate() const;
};

inline constexpr std::uint64_t kPerceptualSeed = 0xD3B1;

class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(std::uint64_t seed = kPerceptualSeed);

  // Feature maps after each stage. Input must be [H,W,3].
  std::vector<Tensor> features(const Tensor& image) const;
  const std::array<Tensor, 3>& weights() const { return weights_; }

 private:
  std::array<Tensor, 3> weights_;
  std::array<Tensor, 3> biases_;
};

Tensor mae_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean local SSIM, same window and constants as ssim().
Tensor ssim_value(const Tensor& pred, const Tensor& target, double peak = 1.0);
Tensor perceptual_loss(const Tensor& pred, const Image& target, const PerceptualExtractor& extractor);

struct LossBreakdown {
  double mae = 0.0;
  double mse = 0.0;
  double perceptual = 0.0;
  double ssim_loss = 0.0;
};

// Terms with zero weight are skipped (and reported as 0 in the breakdown).
Tensor composite_loss(const Tensor& pred, const Image& target, const LossWeights& weights,
                      const PerceptualExtractor& extractor, LossBreakdown* breakdown = nullptr);

}  // namespace deblur
