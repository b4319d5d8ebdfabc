#include "deblur_lab/loss.hpp"

#include <cmath>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/metrics.hpp"
#include "deblur_lab/ops.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0 && delta >= 0.0))
    throw ConfigError("loss weights must be nonnegative");
  if (alpha == 0.0 && beta == 0.0 && gamma == 0.0 && delta == 0.0)
    throw ConfigError("at least one loss weight must be positive");
}

namespace {

constexpr int kStageChannels[4] = {3, 16, 32, 64};

ConvSpec stage_spec(int i) {
  ConvSpec s;
  s.stride = 2;
  s.in_channels = kStageChannels[i];
  s.out_channels = kStageChannels[i + 1];
  return s;
}

}  // namespace

PerceptualExtractor::PerceptualExtractor(std::uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < 3; ++i) {
    const auto cin = static_cast<std::size_t>(kStageChannels[i]);
    const auto cout = static_cast<std::size_t>(kStageChannels[i + 1]);
    const double limit = std::sqrt(6.0 / static_cast<double>(9 * cin));
    std::vector<double> w(9 * cin * cout);
    for (auto& v : w) v = rng.uniform(-limit, limit);
    weights_[static_cast<std::size_t>(i)] = Tensor::from_values({3, 3, cin, cout}, std::move(w));
    biases_[static_cast<std::size_t>(i)] = Tensor::zeros({cout});
  }
}

std::vector<Tensor> PerceptualExtractor::features(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError("perceptual features need a 3-channel [H,W,3] image, got " + shape_str(image.shape()));
  std::vector<Tensor> out;
  Tensor x = image;
  for (int i = 0; i < 3; ++i) {
    x = relu(conv2d(x, weights_[static_cast<std::size_t>(i)], biases_[static_cast<std::size_t>(i)], stage_spec(i)));
    out.push_back(x);
  }
  return out;
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) { return mean(abs(sub(pred, target))); }

Tensor mse_loss(const Tensor& pred, const Tensor& target) { return mean(square(sub(pred, target))); }

Tensor ssim_value(const Tensor& pred, const Tensor& target, double peak) {
  if (pred.shape() != target.shape())
    throw DimensionError("ssim: shapes differ " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  if (pred.rank() != 3 || pred.dim(0) < kSsimWindow || pred.dim(1) < kSsimWindow)
    throw DimensionError("ssim: images must be [H,W,C] with H,W >= " + std::to_string(kSsimWindow));
  const auto win = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  auto blur = [&](const Tensor& t) { return filter2d_valid(t, win, kSsimWindow, kSsimWindow); };
  const Tensor mu_x = blur(pred);
  const Tensor mu_y = blur(target);
  const Tensor mu_xx = mul(mu_x, mu_x);
  const Tensor mu_yy = mul(mu_y, mu_y);
  const Tensor mu_xy = mul(mu_x, mu_y);
  const Tensor var_x = sub(blur(mul(pred, pred)), mu_xx);
  const Tensor var_y = sub(blur(mul(target, target)), mu_yy);
  const Tensor cov = sub(blur(mul(pred, target)), mu_xy);
  const Tensor num = mul(add_scalar(scale(mu_xy, 2.0), c1), add_scalar(scale(cov, 2.0), c2));
  const Tensor den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(var_x, var_y), c2));
  return mean(div(num, den));
}

Tensor perceptual_loss(const Tensor& pred, const Image& target, const PerceptualExtractor& extractor) {
  if (target.channels != 3 || pred.rank() != 3 || pred.dim(2) != 3)
    throw DimensionError("perceptual loss needs 3-channel prediction and target");
  const Tensor t = to_tensor(target);
  if (pred.shape() != t.shape())
    throw DimensionError("perceptual loss: shapes differ " + shape_str(pred.shape()) + " vs " + shape_str(t.shape()));
  const auto fp = extractor.features(pred);
  const auto ft = extractor.features(t);
  Tensor total;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const Tensor term = mse_loss(fp[i], ft[i]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor composite_loss(const Tensor& pred, const Image& target, const LossWeights& weights,
                      const PerceptualExtractor& extractor, LossBreakdown* breakdown) {
  weights.validate();
  const Tensor t = to_tensor(target);
  if (pred.shape() != t.shape())
    throw DimensionError("composite loss: prediction " + shape_str(pred.shape()) + " vs target " +
                         shape_str(t.shape()));
  LossBreakdown parts;
  Tensor total;
  auto accumulate_term = [&](double w, const Tensor& term, double& slot) {
    slot = term.item();
    const Tensor weighted = scale(term, w);
    total = total.defined() ? add(total, weighted) : weighted;
  };
  if (weights.alpha > 0.0) accumulate_term(weights.alpha, mae_loss(pred, t), parts.mae);
  if (weights.beta > 0.0) accumulate_term(weights.beta, mse_loss(pred, t), parts.mse);
  if (weights.gamma > 0.0) accumulate_term(weights.gamma, perceptual_loss(pred, target, extractor), parts.perceptual);
  if (weights.delta > 0.0) {
    const Tensor one_minus = add_scalar(scale(ssim_value(pred, t), -1.0), 1.0);
    accumulate_term(weights.delta, one_minus, parts.ssim_loss);
  }
  if (breakdown) *breakdown = parts;
  return total;
}

}  // namespace deblur
