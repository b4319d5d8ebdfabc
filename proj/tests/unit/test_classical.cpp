#include <cmath>

#include "doctest.h"
#include "deblur_lab/classical.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/metrics.hpp"
#include "deblur_lab/rng.hpp"
#include "deblur_lab/synth.hpp"

using namespace deblur;

namespace {

// Streak blended with a delta: |H| >= 0.2 everywhere, so no spectral zeros.
BlurKernel zero_free_kernel() {
  auto k = generate_linear_kernel(9, 30.0, 7.0);
  for (auto& v : k.values) v *= 0.4;
  k.values[4 * 9 + 4] += 0.6;
  return BlurKernel::from_values(9, k.values);
}

DeconvRequest request(const Image& blurred, const BlurKernel& k, DeconvMethod m) {
  DeconvRequest r;
  r.blurred = blurred;
  r.kernel = k;
  r.method = m;
  return r;
}

}  // namespace

TEST_CASE("frequency-domain oracles") {
  const Image sharp = render_text_image(64, 64, 11);
  const BlurKernel k = zero_free_kernel();
  const Image blurred = convolve(sharp, k, Boundary::kCircular);

  SUBCASE("wiener with tiny nsr") {
    auto r = request(blurred, k, DeconvMethod::kWiener);
    r.params.nsr = 1e-10;
    CHECK(psnr(wiener_filter(r), sharp) >= 40.0);
  }
  SUBCASE("inverse with tiny epsilon") {
    auto r = request(blurred, k, DeconvMethod::kInverse);
    r.params.epsilon = 1e-12;
    CHECK(psnr(inverse_filter(r), sharp) >= 60.0);
    const Image raw = regularized_inverse_raw(blurred, k, 0.0);
    double worst = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) worst = std::max(worst, std::abs(raw.data[i] - sharp.data[i]));
    CHECK(worst <= 1e-6);
  }
  SUBCASE("delta kernel with epsilon 0 is the identity") {
    auto r = request(sharp, BlurKernel::delta(3), DeconvMethod::kInverse);
    r.params.epsilon = 0.0;
    const Image out = inverse_filter(r);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data[i] == doctest::Approx(sharp.data[i]).epsilon(1e-12));
  }
  SUBCASE("exact spectral zeros stay finite") {
    std::vector<double> box(5 * 5, 0.0);
    for (int c = 0; c < 4; ++c) box[2 * 5 + c] = 1.0;  // length 4 divides 64: zeros on the grid
    const auto kb = BlurKernel::from_values(5, box);
    const Image yb = convolve(sharp, kb, Boundary::kCircular);
    for (double eps : {0.0, 1e-6}) {
      auto r = request(yb, kb, DeconvMethod::kInverse);
      r.params.epsilon = eps;
      for (double v : regularized_inverse_raw(yb, kb, eps).data) CHECK(std::isfinite(v));
      for (double v : inverse_filter(r).data) CHECK((v >= 0.0 && v <= 1.0));
    }
  }
  SUBCASE("wiener energy decreases with nsr; negative nsr rejected") {
    double prev = INFINITY;
    for (double nsr : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
      const Image out = regularized_inverse_raw(blurred, k, nsr);
      double e = 0;
      for (double v : out.data) e += v * v;
      CHECK(e < prev);
      prev = e;
    }
    auto r = request(blurred, k, DeconvMethod::kWiener);
    r.params.nsr = -1.0;
    CHECK_THROWS_AS(wiener_filter(r), ParameterError);
  }
  SUBCASE("with noise the best wiener beats the plain inverse") {
    DegradationConfig cfg;
    cfg.kernel = generate_linear_kernel(9, 30.0, 7.0);
    cfg.noise_sigma = 0.01;
    cfg.rng_seed = 3;
    const Image noisy = apply_blur(sharp, cfg);
    auto r = request(noisy, cfg.kernel, DeconvMethod::kInverse);
    r.params.epsilon = 0.0;
    const double inverse_db = psnr(inverse_filter(r), sharp);
    double best = -INFINITY;
    for (double nsr : {1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1}) {
      r.params.nsr = nsr;
      best = std::max(best, psnr(wiener_filter(r), sharp));
    }
    CHECK(best >= inverse_db);
  }
  SUBCASE("reflect boundary rejected") {
    auto r = request(blurred, k, DeconvMethod::kWiener);
    r.boundary = Boundary::kReflect;
    CHECK_THROWS_AS(deconvolve(r), ParameterError);
  }
}

TEST_CASE("richardson-lucy") {
  const Image sharp = render_scene_image(64, 64, 5);
  SUBCASE("flux is conserved") {
    const auto k = generate_trajectory_kernel(13, 8, 1.0);
    auto r = request(convolve(sharp, k, Boundary::kCircular), k, DeconvMethod::kRichardsonLucy);
    r.params.iterations = 100;
    double flux0 = -1, worst = 0;
    richardson_lucy(r, [&](int it, const Image&, double flux) {
      if (it == 0) flux0 = flux;
      worst = std::max(worst, std::abs(flux - flux0) / flux0);
    });
    CHECK(worst <= 1e-6);
  }
  SUBCASE("delta kernel is a fixed point") {
    Image y = sharp;
    for (auto& v : y.data) v = std::max(v, 0.01);
    auto r = request(y, BlurKernel::delta(3), DeconvMethod::kRichardsonLucy);
    r.params.iterations = 1;
    const Image out = richardson_lucy(r);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(out.data[i] == doctest::Approx(y.data[i]).epsilon(1e-12));
  }
  SUBCASE("improves mildly blurred images") {
    int better = 0;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const Image x = render_scene_image(48, 48, 100 + i);
      const auto k = generate_linear_kernel(7, 15.0 * static_cast<double>(i), 5.0);
      const Image y = convolve(x, k, Boundary::kCircular);
      auto r = request(y, k, DeconvMethod::kRichardsonLucy);
      r.params.iterations = 50;
      better += psnr(richardson_lucy(r), x) > psnr(y, x);
    }
    CHECK(better >= 18);
  }
  SUBCASE("parameter checks") {
    auto r = request(sharp, BlurKernel::delta(3), DeconvMethod::kRichardsonLucy);
    r.params.iterations = 0;
    CHECK_THROWS_AS(richardson_lucy(r), ParameterError);
    r.params.iterations = 1;
    r.params.rl_floor = 0.0;
    r.blurred = Image(16, 16, 3, 0.0);
    CHECK_THROWS_AS(richardson_lucy(r), NumericError);
  }
}

TEST_CASE("landweber") {
  const Image sharp = render_text_image(64, 64, 21);
  const auto k = generate_trajectory_kernel(15, 4, 1.0);
  const Image y = convolve(sharp, k, Boundary::kCircular);
  SUBCASE("residual never increases") {
    auto r = request(y, k, DeconvMethod::kLandweber);
    r.params.iterations = 100;
    r.params.tau = 1.0;
    double prev = INFINITY;
    int violations = 0;
    landweber(r, [&](int, const Image&, double res) {
      violations += res > prev;
      prev = res;
    });
    CHECK(violations == 0);
  }
  SUBCASE("delta kernel: residual is zero from the start") {
    auto r = request(sharp, BlurKernel::delta(3), DeconvMethod::kLandweber);
    r.params.iterations = 3;
    landweber(r, [&](int, const Image&, double res) { CHECK(res <= 1e-20); });
    const Image out = landweber(r);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data[i] == doctest::Approx(sharp.data[i]).epsilon(1e-12));
  }
  SUBCASE("tau bounds") {
    auto r = request(y, k, DeconvMethod::kLandweber);
    for (double tau : {0.0, 2.0, -1.0}) {
      r.params.tau = tau;
      CHECK_THROWS_AS(landweber(r), ParameterError);
    }
  }
}

TEST_CASE("total variation") {
  SUBCASE("objective never increases") {
    const Image sharp = render_scene_image(64, 64, 9);
    const auto k = generate_trajectory_kernel(13, 2, 1.0);
    DegradationConfig cfg;
    cfg.kernel = k;
    cfg.noise_sigma = 0.01;
    cfg.rng_seed = 1;
    auto r = request(apply_blur(sharp, cfg), k, DeconvMethod::kTv);
    r.params.iterations = 200;
    double prev = INFINITY;
    int violations = 0;
    tv_deblur(r, [&](int, const Image&, double f) {
      violations += f > prev;
      prev = f;
    });
    CHECK(violations == 0);
  }
  SUBCASE("large lambda smooths noise") {
    Rng rng(3);
    Image noisy(32, 32, 1);
    for (auto& v : noisy.data) v = 0.5 + rng.normal(0.0, 0.05);
    auto r = request(noisy, BlurKernel::delta(3), DeconvMethod::kTv);
    r.params.lambda = 0.2;
    r.params.iterations = 100;
    r.params.step = 0.5;
    const Image out = tv_deblur(r);
    auto var = [](const Image& img) {
      double m = 0, v = 0;
      for (double x : img.data) m += x;
      m /= img.size();
      for (double x : img.data) v += (x - m) * (x - m);
      return v / img.size();
    };
    CHECK(var(out) < var(noisy));
  }
  SUBCASE("lambda 0 follows landweber") {
    const Image sharp = render_text_image(32, 32, 2);
    const auto k = generate_linear_kernel(7, 60.0, 5.0);
    const Image y = convolve(sharp, k, Boundary::kCircular);
    auto tv = request(y, k, DeconvMethod::kTv);
    tv.params.lambda = 0.0;
    tv.params.step = 1.0;
    tv.params.iterations = 20;
    auto lw = request(y, k, DeconvMethod::kLandweber);
    lw.params.tau = 1.0;
    lw.params.iterations = 20;
    const Image a = tv_deblur(tv), b = landweber(lw);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("dispatch and output contract") {
  const Image sharp = render_scene_image(40, 48, 3);
  const auto k = generate_linear_kernel(7, 10.0, 5.0);
  const Image y = convolve(sharp, k, Boundary::kCircular);
  for (auto m : {DeconvMethod::kInverse, DeconvMethod::kWiener, DeconvMethod::kRichardsonLucy, DeconvMethod::kLandweber,
                 DeconvMethod::kTv}) {
    auto r = request(y, k, m);
    r.params.iterations = 5;
    const Image a = deconvolve(r), b = deconvolve(r);
    CHECK(a.same_shape(y));
    CHECK(a.data == b.data);
    for (double v : a.data) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(deconv_method_from_string(to_string(m)) == m);
  }
  CHECK(deconv_method_from_string("rl") == DeconvMethod::kRichardsonLucy);
  CHECK_THROWS_AS(deconv_method_from_string("blind"), ParameterError);
}
