#include "deblur_lab/fft.hpp"

#include <fftw3.h>

#include <mutex>

#include "deblur_lab/errors.hpp"

namespace deblur {

namespace {

// FFTW's planner is not reentrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<Complex> transform(std::vector<Complex> data, std::size_t h, std::size_t w, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), buf, buf, sign, FFTW_ESTIMATE);
  }
  if (!plan) throw NumericError("FFTW could not plan a " + std::to_string(h) + "x" + std::to_string(w) + " transform");
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
  return data;
}

}  // namespace

std::vector<Complex> fft2(const std::vector<double>& plane, std::size_t h, std::size_t w) {
  if (plane.size() != h * w) throw DimensionError("fft2: plane size does not match h*w");
  std::vector<Complex> data(plane.begin(), plane.end());
  return transform(std::move(data), h, w, FFTW_FORWARD);
}

std::vector<double> ifft2_real(const std::vector<Complex>& spectrum, std::size_t h, std::size_t w) {
  if (spectrum.size() != h * w) throw DimensionError("ifft2: spectrum size does not match h*w");
  auto data = transform(spectrum, h, w, FFTW_BACKWARD);
  const double norm = 1.0 / static_cast<double>(h * w);
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = data[i].real() * norm;
  return out;
}

std::vector<Complex> kernel_otf(const std::vector<double>& kernel, std::size_t k, std::size_t h, std::size_t w) {
  if (k > h || k > w) throw ParameterError("kernel larger than the transform size");
  const std::size_t r = k / 2;
  std::vector<double> padded(h * w, 0.0);
  for (std::size_t u = 0; u < k; ++u)
    for (std::size_t v = 0; v < k; ++v) {
      const std::size_t y = (u + h - r) % h;
      const std::size_t x = (v + w - r) % w;
      padded[y * w + x] += kernel[u * k + v];
    }
  return fft2(padded, h, w);
}

}  // namespace deblur
