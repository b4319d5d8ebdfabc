#pragma once

// Non-blind classical deconvolution under a circular boundary.
//
// inverse_filter and wiener_filter share one closed form,
//   X(f) = Y(f) conj(H(f)) / (|H(f)|^2 + r),
// with r = epsilon or r = nsr. The inverse filter's epsilon is therefore the
// zeroth-order Tikhonov regularizer; there is no separate Tikhonov method.
// Bins whose denominator falls below kSpectralFloor are set to zero instead of
// dividing, so r = 0 never produces non-finite output.

#include <functional>
#include <string>

#include "deblur_lab/blur.hpp"
#include "deblur_lab/image.hpp"

namespace deblur {

enum class DeconvMethod { kInverse, kWiener, kRichardsonLucy, kLandweber, kTv };

const char* to_string(DeconvMethod m);
DeconvMethod deconv_method_from_string(const std::string& name);

inline constexpr double kSpectralFloor = 1e-14;

struct DeconvParams {
  double epsilon = 1e-3;   // inverse: spectral regularizer
  double nsr = 1e-2;       // wiener: scalar noise-to-signal ratio
  int iterations = 50;     // richardson_lucy, landweber, tv
  double tau = 1.0;        // landweber step, (0, 2)
  double lambda = 0.01;    // tv weight
  double step = 1.0;       // tv initial step
  double tv_eps = 1e-6;    // tv smoothing inside the square root
  double rl_floor = 1e-6;  // richardson_lucy positivity floor on the observation
};

struct DeconvRequest {
  Image blurred;
  BlurKernel kernel;
  DeconvMethod method = DeconvMethod::kWiener;
  DeconvParams params;
  Boundary boundary = Boundary::kCircular;
};

// Called with the iteration index (0 = initial estimate), the current
// estimate, and a method-specific scalar: total flux for Richardson-Lucy,
// squared residual ||k*x - y||^2 for Landweber, the objective for TV.
using IterationObserver = std::function<void(int, const Image&, double)>;

// Closed-form filter before clamping; r is epsilon or nsr.
Image regularized_inverse_raw(const Image& blurred, const BlurKernel& kernel, double r);

Image inverse_filter(const DeconvRequest& req);
Image wiener_filter(const DeconvRequest& req);
Image richardson_lucy(const DeconvRequest& req, const IterationObserver& observer = {});
Image landweber(const DeconvRequest& req, const IterationObserver& observer = {});
Image tv_deblur(const DeconvRequest& req, const IterationObserver& observer = {});

// Dispatches on req.method.
Image deconvolve(const DeconvRequest& req, const IterationObserver& observer = {});

// Objective minimized by tv_deblur: 0.5*||k*x - y||^2 + lambda * sum sqrt(|grad x|^2 + eps),
// forward differences with circular wrap.
double tv_objective(const Image& estimate, const Image& blurred, const BlurKernel& kernel, double lambda,
                    double tv_eps);

}  // namespace deblur
