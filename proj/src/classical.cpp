#include "deblur_lab/classical.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/fft.hpp"

namespace deblur {

const char* to_string(DeconvMethod m) {
  switch (m) {
    case DeconvMethod::kInverse: return "inverse";
    case DeconvMethod::kWiener: return "wiener";
    case DeconvMethod::kRichardsonLucy: return "richardson_lucy";
    case DeconvMethod::kLandweber: return "landweber";
    case DeconvMethod::kTv: return "tv";
  }
  return "wiener";
}

DeconvMethod deconv_method_from_string(const std::string& name) {
  if (name == "inverse") return DeconvMethod::kInverse;
  if (name == "wiener") return DeconvMethod::kWiener;
  if (name == "richardson_lucy" || name == "rl") return DeconvMethod::kRichardsonLucy;
  if (name == "landweber") return DeconvMethod::kLandweber;
  if (name == "tv") return DeconvMethod::kTv;
  throw ParameterError("unknown deconvolution method '" + name + "'");
}

namespace {

// Circular convolution and its adjoint for one image size, backed by the
// kernel's transfer function.
class CircularOperator {
 public:
  CircularOperator(const BlurKernel& kernel, std::size_t h, std::size_t w)
      : h_(h), w_(w), otf_(kernel_otf(kernel.values, static_cast<std::size_t>(kernel.size), h, w)) {}

  std::vector<double> apply(const std::vector<double>& plane, bool adjoint) const {
    auto spec = fft2(plane, h_, w_);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= adjoint ? std::conj(otf_[i]) : otf_[i];
    return ifft2_real(spec, h_, w_);
  }

  const std::vector<Complex>& otf() const { return otf_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

 private:
  std::size_t h_, w_;
  std::vector<Complex> otf_;
};

void check_request(const DeconvRequest& req) {
  req.kernel.validate();
  if (req.boundary != Boundary::kCircular)
    throw ParameterError("classical deconvolution requires a circular boundary");
  const Image& y = req.blurred;
  if (y.size() == 0 || y.channels == 0) throw ParameterError("empty input image");
  if (static_cast<std::size_t>(req.kernel.size) > y.height || static_cast<std::size_t>(req.kernel.size) > y.width)
    throw ParameterError("kernel does not fit the image");
}

void check_iterations(int iterations) {
  if (iterations < 1) throw ParameterError("iterations must be >= 1, got " + std::to_string(iterations));
}

// Applies fn(plane, op) to every channel.
template <typename F>
Image per_channel(const Image& y, const BlurKernel& kernel, F&& fn) {
  CircularOperator op(kernel, y.height, y.width);
  Image out(y.height, y.width, y.channels);
  for (std::size_t c = 0; c < y.channels; ++c) out.set_plane(c, fn(y.plane(c), op));
  return out;
}

double squared_residual(const Image& x, const Image& y, const CircularOperator& op) {
  double r = 0.0;
  for (std::size_t c = 0; c < y.channels; ++c) {
    const auto kx = op.apply(x.plane(c), false);
    const auto yp = y.plane(c);
    for (std::size_t i = 0; i < kx.size(); ++i) r += (kx[i] - yp[i]) * (kx[i] - yp[i]);
  }
  return r;
}

// Data-term gradient k^T * (k*x - y), all channels.
Image data_gradient(const Image& x, const Image& y, const CircularOperator& op) {
  Image g(x.height, x.width, x.channels);
  for (std::size_t c = 0; c < x.channels; ++c) {
    auto r = op.apply(x.plane(c), false);
    const auto yp = y.plane(c);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= yp[i];
    g.set_plane(c, op.apply(r, true));
  }
  return g;
}

double tv_term(const Image& x, double eps) {
  const std::size_t h = x.height, w = x.width;
  double tv = 0.0;
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double v = x.at(i, j, c);
        const double dx = x.at(i, (j + 1) % w, c) - v;
        const double dy = x.at((i + 1) % h, j, c) - v;
        tv += std::sqrt(dx * dx + dy * dy + eps);
      }
  return tv;
}

Image tv_gradient(const Image& x, double eps) {
  const std::size_t h = x.height, w = x.width;
  Image g(h, w, x.channels);
  for (std::size_t c = 0; c < x.channels; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double v = x.at(i, j, c);
        const double dx = x.at(i, (j + 1) % w, c) - v;
        const double dy = x.at((i + 1) % h, j, c) - v;
        const double phi = std::sqrt(dx * dx + dy * dy + eps);
        g.at(i, j, c) -= (dx + dy) / phi;
        g.at(i, (j + 1) % w, c) += dx / phi;
        g.at((i + 1) % h, j, c) += dy / phi;
      }
  return g;
}

}  // namespace

Image regularized_inverse_raw(const Image& blurred, const BlurKernel& kernel, double r) {
  if (!(r >= 0.0)) throw ParameterError("spectral regularizer must be >= 0");
  return per_channel(blurred, kernel, [r](const std::vector<double>& plane, const CircularOperator& op) {
    auto spec = fft2(plane, op.height(), op.width());
    const auto& otf = op.otf();
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const double denom = std::norm(otf[i]) + r;
      spec[i] = denom < kSpectralFloor ? Complex{} : spec[i] * std::conj(otf[i]) / denom;
    }
    return ifft2_real(spec, op.height(), op.width());
  });
}

Image inverse_filter(const DeconvRequest& req) {
  check_request(req);
  if (!(req.params.epsilon >= 0.0)) throw ParameterError("inverse filter epsilon must be >= 0");
  return clamp_unit(regularized_inverse_raw(req.blurred, req.kernel, req.params.epsilon));
}

Image wiener_filter(const DeconvRequest& req) {
  check_request(req);
  if (!(req.params.nsr >= 0.0)) throw ParameterError("wiener nsr must be >= 0, got " + std::to_string(req.params.nsr));
  return clamp_unit(regularized_inverse_raw(req.blurred, req.kernel, req.params.nsr));
}

Image richardson_lucy(const DeconvRequest& req, const IterationObserver& observer) {
  check_request(req);
  check_iterations(req.params.iterations);
  const double floor = req.params.rl_floor;
  Image y = req.blurred;
  for (auto& v : y.data) {
    v = std::max(v, floor);
    if (!(v > 0.0)) throw NumericError("richardson_lucy needs strictly positive pixels after flooring");
  }
  CircularOperator op(req.kernel, y.height, y.width);
  Image x = y;
  auto flux = [](const Image& img) { return std::accumulate(img.data.begin(), img.data.end(), 0.0); };
  if (observer) observer(0, x, flux(x));
  for (int it = 1; it <= req.params.iterations; ++it) {
    for (std::size_t c = 0; c < y.channels; ++c) {
      auto xp = x.plane(c);
      auto ratio = op.apply(xp, false);
      const auto yp = y.plane(c);
      for (std::size_t i = 0; i < ratio.size(); ++i) ratio[i] = yp[i] / std::max(ratio[i], 1e-300);
      const auto corr = op.apply(ratio, true);
      for (std::size_t i = 0; i < xp.size(); ++i) xp[i] *= corr[i];
      x.set_plane(c, xp);
    }
    if (observer) observer(it, x, flux(x));
  }
  return clamp_unit(std::move(x));
}

Image landweber(const DeconvRequest& req, const IterationObserver& observer) {
  check_request(req);
  check_iterations(req.params.iterations);
  const double tau = req.params.tau;
  if (!(tau > 0.0 && tau < 2.0)) throw ParameterError("landweber tau must lie in (0, 2), got " + std::to_string(tau));
  const Image& y = req.blurred;
  CircularOperator op(req.kernel, y.height, y.width);
  Image x = y;
  if (observer) observer(0, x, squared_residual(x, y, op));
  for (int it = 1; it <= req.params.iterations; ++it) {
    const Image g = data_gradient(x, y, op);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] -= tau * g.data[i];
    if (observer) observer(it, x, squared_residual(x, y, op));
  }
  return clamp_unit(std::move(x));
}

double tv_objective(const Image& estimate, const Image& blurred, const BlurKernel& kernel, double lambda,
                    double tv_eps) {
  CircularOperator op(kernel, blurred.height, blurred.width);
  const double data = 0.5 * squared_residual(estimate, blurred, op);
  return lambda == 0.0 ? data : data + lambda * tv_term(estimate, tv_eps);
}

Image tv_deblur(const DeconvRequest& req, const IterationObserver& observer) {
  check_request(req);
  check_iterations(req.params.iterations);
  const auto& p = req.params;
  if (!(p.lambda >= 0.0)) throw ParameterError("tv lambda must be >= 0");
  if (!(p.step > 0.0)) throw ParameterError("tv step must be > 0");
  if (!(p.tv_eps > 0.0)) throw ParameterError("tv smoothing eps must be > 0");
  constexpr int kMaxHalvings = 30;

  const Image& y = req.blurred;
  CircularOperator op(req.kernel, y.height, y.width);
  auto objective = [&](const Image& x) {
    const double data = 0.5 * squared_residual(x, y, op);
    return p.lambda == 0.0 ? data : data + p.lambda * tv_term(x, p.tv_eps);
  };

  Image x = y;
  double f = objective(x);
  double step = p.step;
  if (observer) observer(0, x, f);
  for (int it = 1; it <= p.iterations; ++it) {
    Image g = data_gradient(x, y, op);
    if (p.lambda != 0.0) {
      const Image tg = tv_gradient(x, p.tv_eps);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += p.lambda * tg.data[i];
    }
    int halvings = 0;
    while (true) {
      Image candidate = x;
      for (std::size_t i = 0; i < x.data.size(); ++i) candidate.data[i] -= step * g.data[i];
      const double fc = objective(candidate);
      if (fc <= f) {
        x = std::move(candidate);
        f = fc;
        break;
      }
      if (++halvings > kMaxHalvings)
        throw ConvergenceError("tv_deblur: objective failed to decrease after " + std::to_string(kMaxHalvings) +
                               " step halvings at iteration " + std::to_string(it));
      step *= 0.5;
    }
    if (observer) observer(it, x, f);
  }
  return clamp_unit(std::move(x));
}

Image deconvolve(const DeconvRequest& req, const IterationObserver& observer) {
  switch (req.method) {
    case DeconvMethod::kInverse: return inverse_filter(req);
    case DeconvMethod::kWiener: return wiener_filter(req);
    case DeconvMethod::kRichardsonLucy: return richardson_lucy(req, observer);
    case DeconvMethod::kLandweber: return landweber(req, observer);
    case DeconvMethod::kTv: return tv_deblur(req, observer);
  }
  throw ParameterError("unknown deconvolution method");
}

}  // namespace deblur
