#pragma once

// Image-quality metrics on unit-interval images.
//
// SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = (0.01*peak)^2,
// C2 = (0.03*peak)^2, "valid" filtering, and averages the local map over
// positions and channels.

#include <vector>

#include "deblur_lab/image.hpp"

namespace deblur {

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

struct MetricResult {
  double mse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
};

double mse(const Image& a, const Image& b);
double mae(const Image& a, const Image& b);
// 10*log10(peak^2/mse); kPsnrCapDb when mse == 0.
double psnr_from_mse(double mse_value, double peak = 1.0);
double psnr(const Image& a, const Image& b, double peak = 1.0);
double ssim(const Image& a, const Image& b, double peak = 1.0);
MetricResult compare_images(const Image& a, const Image& b, double peak = 1.0);

// Normalized separable Gaussian, returned as a full size*size window.
std::vector<double> gaussian_window(int size = kSsimWindow, double sigma = kSsimSigma);

}  // namespace deblur
