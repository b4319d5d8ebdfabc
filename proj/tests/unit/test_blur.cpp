#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "deblur_lab/blur.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/fft.hpp"
#include "deblur_lab/rng.hpp"
#include "deblur_lab/synth.hpp"

using namespace deblur;
namespace fs = std::filesystem;

namespace {

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, c);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

double mean_of(const Image& img) {
  double s = 0;
  for (double v : img.data) s += v;
  return s / static_cast<double>(img.size());
}

}  // namespace

TEST_CASE("linear kernel") {
  SUBCASE("horizontal streak stays on the center row, symmetric") {
    const auto k = generate_linear_kernel(13, 0.0, 5.0);
    CHECK(k.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int r = 0; r < 13; ++r)
      for (int c = 0; c < 13; ++c) {
        if (r != 6) CHECK(k.at(r, c) == 0.0);
        CHECK(k.at(r, c) == doctest::Approx(k.at(r, 12 - c)).epsilon(1e-12));
      }
    CHECK(k.at(6, 6) > 0.0);
  }
  SUBCASE("length 1 is a delta") {
    const auto k = generate_linear_kernel(13, 37.0, 1.0);
    CHECK(k.at(6, 6) == 1.0);
    CHECK(k.sum() == 1.0);
  }
  SUBCASE("bad parameters") {
    CHECK_THROWS_AS(generate_linear_kernel(12, 0.0, 5.0), ParameterError);
    CHECK_THROWS_AS(generate_linear_kernel(13, 0.0, 14.0), ParameterError);
    CHECK_THROWS_AS(generate_linear_kernel(65, 0.0, 5.0), ParameterError);
  }
  SUBCASE("every bank size validates") {
    for (int size = 13; size <= 31; size += 2)
      for (double angle : {0.0, 30.0, 45.0, 90.0, 133.0}) {
        const auto k = generate_linear_kernel(size, angle, size * 0.8);
        CHECK_NOTHROW(k.validate());
        CHECK(k.size == size);
      }
  }
}

TEST_CASE("trajectory kernel") {
  SUBCASE("deterministic") {
    const auto a = generate_trajectory_kernel(21, 77, 1.0), b = generate_trajectory_kernel(21, 77, 1.0);
    CHECK(a.values == b.values);
    CHECK(generate_trajectory_kernel(21, 78, 1.0).values != a.values);
  }
  SUBCASE("normalized for many seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto k = generate_trajectory_kernel(13 + 2 * static_cast<int>(seed % 10), seed, 1.0);
      CHECK(std::abs(k.sum() - 1.0) <= 1e-9);
      CHECK_NOTHROW(k.validate());
    }
  }
  SUBCASE("zero jitter reduces to the straight streak") {
    const auto t = generate_trajectory_kernel(17, 5, 0.0);
    const auto l = generate_linear_kernel(17, t.angle_degrees, t.length_px);
    for (std::size_t i = 0; i < t.values.size(); ++i) CHECK(t.values[i] == doctest::Approx(l.values[i]).epsilon(1e-9));
  }
}

TEST_CASE("apply_blur") {
  const Image img = random_image(32, 40, 3, 1);
  SUBCASE("delta kernel without noise is exact") {
    DegradationConfig cfg;
    cfg.kernel = BlurKernel::delta(5);
    CHECK(apply_blur(img, cfg).data == img.data);
    cfg.boundary = Boundary::kReflect;
    CHECK(apply_blur(img, cfg).data == img.data);
  }
  SUBCASE("constant image stays constant") {
    DegradationConfig cfg;
    cfg.kernel = generate_trajectory_kernel(15, 3, 1.0);
    const Image out = apply_blur(Image(32, 32, 3, 0.37), cfg);
    for (double v : out.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));
  }
  SUBCASE("circular convolution matches the FFT product") {
    const auto k = generate_trajectory_kernel(11, 9, 1.0);
    const Image out = convolve(img, k, Boundary::kCircular);
    const auto otf = kernel_otf(k.values, 11, 32, 40);
    double worst = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      auto spec = fft2(img.plane(c), 32, 40);
      for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= otf[i];
      const auto ref = ifft2_real(spec, 32, 40);
      const auto got = out.plane(c);
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - got[i]));
    }
    CHECK(worst <= 1e-8);
  }
  SUBCASE("mean preserved and offset commutes under circular boundary") {
    const auto k = generate_linear_kernel(13, 20.0, 9.0);
    const Image out = convolve(img, k, Boundary::kCircular);
    CHECK(std::abs(mean_of(out) - mean_of(img)) <= 1e-9);
    Image shifted = img;
    for (auto& v : shifted.data) v += 0.25;
    const Image out2 = convolve(shifted, k, Boundary::kCircular);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out2.data[i] - out.data[i] - 0.25) <= 1e-12);
  }
  SUBCASE("noise is seeded and clamped") {
    DegradationConfig cfg;
    cfg.kernel = generate_linear_kernel(7, 0.0, 3.0);
    cfg.noise_sigma = 0.2;
    cfg.rng_seed = 4;
    const Image a = apply_blur(img, cfg), b = apply_blur(img, cfg);
    CHECK(a.data == b.data);
    for (double v : a.data) CHECK((v >= 0.0 && v <= 1.0));
  }
  SUBCASE("kernel larger than the image") {
    DegradationConfig cfg;
    cfg.kernel = generate_linear_kernel(31, 0.0, 9.0);
    CHECK_THROWS_AS(apply_blur(random_image(16, 16, 3, 2), cfg), ParameterError);
  }
}

TEST_CASE("kernel spectrum") {
  SUBCASE("delta is flat") {
    const auto s = kernel_spectrum(BlurKernel::delta(5), 32, 32, false);
    for (double m : s.magnitude) CHECK(m == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("DC is the maximum and equals the kernel sum") {
    const auto k = generate_trajectory_kernel(21, 12, 1.0);
    const auto s = kernel_spectrum(k, 64, 64, false);
    CHECK(s.dc() == doctest::Approx(1.0).epsilon(1e-12));
    for (double m : s.magnitude) CHECK(m <= 1.0 + 1e-9);
  }
  SUBCASE("box kernel follows the Dirichlet kernel") {
    const int L = 5, n = 60;
    std::vector<double> v(7 * 7, 0.0);
    for (int c = 1; c < 1 + L; ++c) v[3 * 7 + c] = 1.0;
    const auto k = BlurKernel::from_values(7, v);
    const auto s = kernel_spectrum(k, n, n, false);
    for (int j = 0; j < n; ++j) {
      const double f = static_cast<double>(j - n / 2) / n;
      const double expected = f == 0.0 ? 1.0 : std::abs(std::sin(std::numbers::pi * f * L) / (L * std::sin(std::numbers::pi * f)));
      CHECK(s.at(n / 2, static_cast<std::size_t>(j)) == doctest::Approx(expected).epsilon(1e-9).scale(1.0));
    }
    CHECK(s.at(n / 2, n / 2 + n / L) < 1e-12);  // zero at f = 1/L
  }
  SUBCASE("log scaling") {
    const auto k = generate_linear_kernel(9, 45.0, 7.0);
    const auto lin = kernel_spectrum(k, 16, 16, false), lg = kernel_spectrum(k, 16, 16, true);
    for (std::size_t i = 0; i < lin.magnitude.size(); ++i)
      CHECK(lg.magnitude[i] == doctest::Approx(std::log1p(lin.magnitude[i])));
  }
}

TEST_CASE("kernel text format round trip") {
  const auto k = generate_trajectory_kernel(15, 42, 1.0);
  const auto back = kernel_from_text(kernel_to_text(k));
  CHECK(back.size == 15);
  CHECK(back.values == k.values);
  CHECK(kernel_to_text(k).rfind("PSF v1 15\n", 0) == 0);
  CHECK_THROWS_AS(kernel_from_text("PSF v1 3\n1 0 0\n0 0 0\n0 0 0.5\n"), ParameterError);
  CHECK_THROWS_AS(kernel_from_text("PSF v2 3\n"), ParameterError);

  const fs::path dir = fs::temp_directory_path() / "deblur_lab_blur_test";
  fs::remove_all(dir);
  save_kernel(k, dir / "k.psf");
  CHECK(load_kernel(dir / "k.psf").values == k.values);
  save_spectrum_png(kernel_spectrum(k, 64, 64, true), dir / "spec.png");
  const Image spec = load_png(dir / "spec.png");
  CHECK(spec.height == 64);
  CHECK_THROWS_AS(load_kernel(dir / "missing.psf"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("synthetic images") {
  const Image a = render_text_image(64, 64, 3), b = render_text_image(64, 64, 3);
  CHECK(a.data == b.data);
  CHECK(render_text_image(64, 64, 4).data != a.data);
  const Image s = render_scene_image(96, 80, 1);
  CHECK(s.height == 96);
  CHECK(s.width == 80);
  for (double v : s.data) CHECK((v >= 0.0 && v <= 1.0));
}
