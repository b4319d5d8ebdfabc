#pragma once

// Motion-blur point-spread functions, the degradation model
//   y = k * x + n
// (true 2-D convolution per channel, additive Gaussian noise, clamp to [0,1]),
// and frequency-domain kernel diagnostics.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deblur_lab/image.hpp"

namespace deblur {

enum class KernelGenerator { kLinear, kTrajectory, kCustom };

const char* to_string(KernelGenerator g);

// Odd-sized, nonnegative, sums to one.
struct BlurKernel {
  int size = 1;
  std::vector<double> values;  // size*size, row-major
  KernelGenerator generator = KernelGenerator::kCustom;
  double angle_degrees = 0.0;
  double length_px = 0.0;
  std::uint64_t seed = 0;

  static constexpr int kMinSize = 3;
  static constexpr int kMaxSize = 63;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row * size + col)]; }
  double sum() const;
  int radius() const { return size / 2; }

  // Throws ParameterError when any invariant fails.
  void validate() const;

  // Wraps explicit weights; with normalize=true they are rescaled to sum 1.
  static BlurKernel from_values(int size, std::vector<double> values, bool normalize = true);
  static BlurKernel delta(int size);
};

// Anti-aliased line segment through the center. length_px counts pixels along
// the streak: length 1 is a delta, length L spans L-1 pixels between the
// endpoint centers. The seed is recorded but does not affect the result.
BlurKernel generate_linear_kernel(int size, double angle_degrees, double length_px, std::uint64_t seed = 0);

// Smoothed random walk (camera-shake style) rasterized by bilinear splatting.
// jitter scales the angular noise; jitter 0 gives a straight streak whose
// angle/length are recorded in the kernel metadata.
BlurKernel generate_trajectory_kernel(int size, std::uint64_t seed, double jitter);

enum class Boundary { kCircular, kReflect };

const char* to_string(Boundary b);
Boundary boundary_from_string(const std::string& name);

struct DegradationConfig {
  BlurKernel kernel;
  double noise_sigma = 0.0;
  Boundary boundary = Boundary::kCircular;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// True convolution (kernel flipped) per channel, no noise, no clamping.
Image convolve(const Image& image, const BlurKernel& kernel, Boundary boundary);

// Full degradation: convolve, add N(0, sigma^2) per sample, clamp to [0,1].
Image apply_blur(const Image& sharp, const DegradationConfig& config);

// |DFT| of the kernel zero-padded to height x width with its center at the
// origin, reordered so the zero frequency sits at (height/2, width/2).
struct SpectrumImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> magnitude;
  bool log_scaled = false;

  double at(std::size_t y, std::size_t x) const { return magnitude[y * width + x]; }
  double dc() const { return at(height / 2, width / 2); }
};

SpectrumImage kernel_spectrum(const BlurKernel& kernel, std::size_t height, std::size_t width, bool log_scaled);

// Grayscale 8-bit rendering scaled by the maximum magnitude.
void save_spectrum_png(const SpectrumImage& spectrum, const std::filesystem::path& path);

// Text PSF format: "PSF v1 <size>" followed by size rows of size values.
std::string kernel_to_text(const BlurKernel& kernel);
BlurKernel kernel_from_text(const std::string& text);
void save_kernel(const BlurKernel& kernel, const std::filesystem::path& path);
BlurKernel load_kernel(const std::filesystem::path& path);

}  // namespace deblur
