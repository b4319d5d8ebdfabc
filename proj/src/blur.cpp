#include "deblur_lab/blur.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/fft.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

const char* to_string(KernelGenerator g) {
  switch (g) {
    case KernelGenerator::kLinear: return "linear";
    case KernelGenerator::kTrajectory: return "trajectory";
    case KernelGenerator::kCustom: return "custom";
  }
  return "custom";
}

const char* to_string(Boundary b) { return b == Boundary::kCircular ? "circular" : "reflect"; }

Boundary boundary_from_string(const std::string& name) {
  if (name == "circular") return Boundary::kCircular;
  if (name == "reflect") return Boundary::kReflect;
  throw ParameterError("unknown boundary '" + name + "' (expected circular or reflect)");
}

double BlurKernel::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

void BlurKernel::validate() const {
  if (size % 2 == 0 || size < 1 || size > kMaxSize)
    throw ParameterError("kernel size must be odd and at most " + std::to_string(kMaxSize) + ", got " +
                         std::to_string(size));
  if (values.size() != static_cast<std::size_t>(size * size))
    throw ParameterError("kernel holds " + std::to_string(values.size()) + " values for size " +
                         std::to_string(size));
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParameterError("kernel values must be finite and nonnegative");
  const double s = sum();
  if (std::abs(s - 1.0) > 1e-9) throw ParameterError("kernel must sum to 1, sums to " + std::to_string(s));
}

BlurKernel BlurKernel::from_values(int size, std::vector<double> values, bool normalize) {
  BlurKernel k;
  k.size = size;
  k.values = std::move(values);
  if (normalize) {
    const double s = k.sum();
    if (!(s > 0.0)) throw ParameterError("kernel weights sum to zero");
    for (auto& v : k.values) v /= s;
  }
  k.validate();
  return k;
}

BlurKernel BlurKernel::delta(int size) {
  std::vector<double> v(static_cast<std::size_t>(size * size), 0.0);
  v[static_cast<std::size_t>((size / 2) * size + size / 2)] = 1.0;
  BlurKernel k = from_values(size, std::move(v), false);
  k.length_px = 1.0;
  return k;
}

namespace {

struct Point {
  double x;
  double y;
};

void check_generator_size(int size) {
  if (size < BlurKernel::kMinSize || size > BlurKernel::kMaxSize || size % 2 == 0)
    throw ParameterError("kernel size must be odd in [" + std::to_string(BlurKernel::kMinSize) + ", " +
                         std::to_string(BlurKernel::kMaxSize) + "], got " + std::to_string(size));
}

// Splats weight w at offset (x, y) from the kernel center.
void splat(std::vector<double>& k, int size, Point p, double w) {
  const double r = size / 2;
  const double fx = p.x + r, fy = p.y + r;
  const double x0 = std::floor(fx), y0 = std::floor(fy);
  const double ax = fx - x0, ay = fy - y0;
  const int ix = static_cast<int>(x0), iy = static_cast<int>(y0);
  const double weights[2][2] = {{(1 - ax) * (1 - ay), ax * (1 - ay)}, {(1 - ax) * ay, ax * ay}};
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const double wt = weights[dy][dx];
      if (wt == 0.0) continue;
      const int cx = std::clamp(ix + dx, 0, size - 1);
      const int cy = std::clamp(iy + dy, 0, size - 1);
      k[static_cast<std::size_t>(cy * size + cx)] += w * wt;
    }
}

constexpr double kSamplesPerPixel = 16.0;

// Samples the polyline uniformly in arc length (trapezoid weights) and splats.
std::vector<double> rasterize_polyline(const std::vector<Point>& pts, int size) {
  std::vector<double> k(static_cast<std::size_t>(size * size), 0.0);
  std::vector<double> seg_len(pts.size() > 1 ? pts.size() - 1 : 0);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    seg_len[i] = std::hypot(pts[i + 1].x - pts[i].x, pts[i + 1].y - pts[i].y);
    total += seg_len[i];
  }
  if (total == 0.0) {
    splat(k, size, pts.front(), 1.0);
    return k;
  }
  const auto m = static_cast<std::size_t>(std::ceil(total * kSamplesPerPixel));
  std::size_t seg = 0;
  double seg_start = 0.0;
  for (std::size_t j = 0; j <= m; ++j) {
    const double s = total * static_cast<double>(j) / static_cast<double>(m);
    while (seg + 1 < seg_len.size() && s > seg_start + seg_len[seg]) {
      seg_start += seg_len[seg];
      ++seg;
    }
    const double t = seg_len[seg] > 0.0 ? std::clamp((s - seg_start) / seg_len[seg], 0.0, 1.0) : 0.0;
    const Point a = pts[seg], b = pts[seg + 1];
    const double w = (j == 0 || j == m) ? 0.5 : 1.0;
    splat(k, size, {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)}, w);
  }
  return k;
}

}  // namespace

BlurKernel generate_linear_kernel(int size, double angle_degrees, double length_px, std::uint64_t seed) {
  check_generator_size(size);
  if (!(length_px >= 1.0) || length_px > size)
    throw ParameterError("linear kernel length must be in [1, size], got " + std::to_string(length_px));
  const double theta = angle_degrees * std::numbers::pi / 180.0;
  // Image rows grow downward; positive angles rotate counter-clockwise on screen.
  const double dx = std::cos(theta), dy = -std::sin(theta);
  const double h = 0.5 * (length_px - 1.0);
  std::vector<Point> pts;
  if (h == 0.0) {
    pts = {{0.0, 0.0}};
  } else {
    pts = {{-h * dx, -h * dy}, {h * dx, h * dy}};
  }
  BlurKernel k = BlurKernel::from_values(size, rasterize_polyline(pts, size));
  k.generator = KernelGenerator::kLinear;
  k.angle_degrees = angle_degrees;
  k.length_px = length_px;
  k.seed = seed;
  return k;
}

BlurKernel generate_trajectory_kernel(int size, std::uint64_t seed, double jitter) {
  check_generator_size(size);
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw ParameterError("trajectory jitter must be >= 0");
  Rng rng(seed);
  const double start_angle = rng.uniform(0.0, std::numbers::pi);
  // Fraction of the kernel half-width the streak may occupy.
  const double reach = rng.uniform(0.45, 0.98);
  const int steps = 4 * size;

  std::vector<Point> path{{0.0, 0.0}};
  double theta = start_angle;
  double omega = 0.0;
  for (int i = 0; i < steps; ++i) {
    omega = 0.8 * omega + 0.25 * jitter * rng.normal();
    theta += omega;
    const double speed = 1.0 + 0.5 * jitter * (rng.uniform() - 0.5);
    const Point& p = path.back();
    path.push_back({p.x + speed * std::cos(theta), p.y - speed * std::sin(theta)});
  }

  // Center on the bounding-box midpoint, then scale into the kernel.
  double min_x = path[0].x, max_x = path[0].x, min_y = path[0].y, max_y = path[0].y;
  for (const auto& p : path) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
  const double half_extent = std::max(0.5 * (max_x - min_x), 0.5 * (max_y - min_y));
  const double target = reach * 0.5 * (size - 1);
  const double s = half_extent > 0.0 ? target / half_extent : 0.0;
  double arc = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    path[i] = {(path[i].x - cx) * s, (path[i].y - cy) * s};
    if (i) arc += std::hypot(path[i].x - path[i - 1].x, path[i].y - path[i - 1].y);
  }
  if (jitter == 0.0) path = {path.front(), path.back()};

  BlurKernel k = BlurKernel::from_values(size, rasterize_polyline(path, size));
  k.generator = KernelGenerator::kTrajectory;
  k.angle_degrees = start_angle * 180.0 / std::numbers::pi;
  k.length_px = arc + 1.0;
  k.seed = seed;
  return k;
}

void DegradationConfig::validate() const {
  kernel.validate();
  if (!(noise_sigma >= 0.0) || noise_sigma >= 1.0)
    throw ParameterError("noise_sigma must be in [0, 1), got " + std::to_string(noise_sigma));
}

namespace {

std::ptrdiff_t wrap_index(std::ptrdiff_t i, std::ptrdiff_t n, Boundary b) {
  if (b == Boundary::kCircular) return ((i % n) + n) % n;
  // Mirror about the edge samples (no edge repetition).
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

Image convolve(const Image& image, const BlurKernel& kernel, Boundary boundary) {
  kernel.validate();
  if (static_cast<std::size_t>(kernel.size) > image.height || static_cast<std::size_t>(kernel.size) > image.width)
    throw ParameterError("kernel " + std::to_string(kernel.size) + "x" + std::to_string(kernel.size) +
                         " does not fit image " + std::to_string(image.height) + "x" + std::to_string(image.width));
  const auto h = static_cast<std::ptrdiff_t>(image.height);
  const auto w = static_cast<std::ptrdiff_t>(image.width);
  const std::size_t c = image.channels;
  const int r = kernel.radius();
  Image out(image.height, image.width, c);
  std::vector<std::ptrdiff_t> col(static_cast<std::size_t>(kernel.size));
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double* o = &out.data[static_cast<std::size_t>(y * w + x) * c];
      for (int u = -r; u <= r; ++u) {
        const std::ptrdiff_t sy = wrap_index(y - u, h, boundary);
        for (int v = -r; v <= r; ++v) {
          const double kv = kernel.at(u + r, v + r);
          if (kv == 0.0) continue;
          const std::ptrdiff_t sx = wrap_index(x - v, w, boundary);
          const double* src = &image.data[static_cast<std::size_t>(sy * w + sx) * c];
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += kv * src[ch];
        }
      }
    }
  return out;
}

Image apply_blur(const Image& sharp, const DegradationConfig& config) {
  config.validate();
  if (sharp.channels != 1 && sharp.channels != 3)
    throw ParameterError("images must have 1 or 3 channels, got " + std::to_string(sharp.channels));
  Image out = convolve(sharp, config.kernel, config.boundary);
  if (config.noise_sigma > 0.0) {
    Rng rng(config.rng_seed);
    for (auto& v : out.data) v += config.noise_sigma * rng.normal();
  }
  return clamp_unit(std::move(out));
}

SpectrumImage kernel_spectrum(const BlurKernel& kernel, std::size_t height, std::size_t width, bool log_scaled) {
  kernel.validate();
  if (height < static_cast<std::size_t>(kernel.size) || width < static_cast<std::size_t>(kernel.size))
    throw ParameterError("spectrum size must be at least the kernel size");
  const auto otf = kernel_otf(kernel.values, static_cast<std::size_t>(kernel.size), height, width);
  SpectrumImage s;
  s.height = height;
  s.width = width;
  s.log_scaled = log_scaled;
  s.magnitude.resize(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sy = (y + height / 2) % height;
      const std::size_t sx = (x + width / 2) % width;
      const double m = std::abs(otf[y * width + x]);
      s.magnitude[sy * width + sx] = log_scaled ? std::log1p(m) : m;
    }
  return s;
}

void save_spectrum_png(const SpectrumImage& spectrum, const std::filesystem::path& path) {
  const double peak = *std::max_element(spectrum.magnitude.begin(), spectrum.magnitude.end());
  Image img(spectrum.height, spectrum.width, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = peak > 0.0 ? spectrum.magnitude[i] / peak : 0.0;
  save_png(img, path);
}

std::string kernel_to_text(const BlurKernel& kernel) {
  kernel.validate();
  std::ostringstream os;
  os << "PSF v1 " << kernel.size << '\n' << std::setprecision(17);
  for (int r = 0; r < kernel.size; ++r) {
    for (int c = 0; c < kernel.size; ++c) {
      if (c) os << ' ';
      os << kernel.at(r, c);
    }
    os << '\n';
  }
  return os.str();
}

BlurKernel kernel_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string magic, version;
  int size = 0;
  if (!(is >> magic >> version >> size) || magic != "PSF" || version != "v1")
    throw ParameterError("not a PSF v1 kernel file");
  if (size <= 0 || size % 2 == 0 || size > BlurKernel::kMaxSize)
    throw ParameterError("PSF header declares invalid size " + std::to_string(size));
  std::vector<double> values(static_cast<std::size_t>(size * size));
  for (auto& v : values)
    if (!(is >> v)) throw ParameterError("PSF file truncated: expected " + std::to_string(size * size) + " values");
  double extra = 0.0;
  if (is >> extra) throw ParameterError("PSF file has trailing values");
  BlurKernel k;
  k.size = size;
  k.values = std::move(values);
  k.validate();
  return k;
}

void save_kernel(const BlurKernel& kernel, const std::filesystem::path& path) {
  if (std::error_code ec; path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write kernel file " + path.string());
  out << kernel_to_text(kernel);
  if (!out) throw IoError("failed writing kernel file " + path.string());
}

BlurKernel load_kernel(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open kernel file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return kernel_from_text(ss.str());
  } catch (const ParameterError& e) {
    throw ParameterError(path.string() + ": " + e.what());
  }
}

}  // namespace deblur
