#include "deblur_lab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deblur_lab/errors.hpp"

namespace deblur {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels) + ")");
  if (a.size() == 0) throw DimensionError(std::string(what) + ": empty images");
}

// Valid-mode correlation of one plane with the window.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& win, std::size_t k) {
  const std::size_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) acc += win[u * k + v] * plane[(y + u) * w + x + v];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

std::vector<double> gaussian_window(int size, double sigma) {
  if (size <= 0 || size % 2 == 0 || !(sigma > 0.0)) throw ParameterError("gaussian window needs odd size, sigma > 0");
  const int r = size / 2;
  std::vector<double> g1(static_cast<std::size_t>(size));
  double s = 0.0;
  for (int i = -r; i <= r; ++i) {
    g1[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    s += g1[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : g1) v /= s;
  std::vector<double> win(static_cast<std::size_t>(size * size));
  for (std::size_t u = 0; u < g1.size(); ++u)
    for (std::size_t v = 0; v < g1.size(); ++v) win[u * g1.size() + v] = g1[u] * g1[v];
  return win;
}

double mse(const Image& a, const Image& b) {
  require_same(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

double mae(const Image& a, const Image& b) {
  require_same(a, b, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

double psnr_from_mse(double mse_value, double peak) {
  if (!(peak > 0.0)) throw ParameterError("psnr peak must be > 0");
  if (mse_value < 0.0) throw ParameterError("mse must be >= 0");
  if (mse_value == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse_value));
}

double psnr(const Image& a, const Image& b, double peak) { return psnr_from_mse(mse(a, b), peak); }

double ssim(const Image& a, const Image& b, double peak) {
  require_same(a, b, "ssim");
  if (!(peak > 0.0)) throw ParameterError("ssim peak must be > 0");
  const std::size_t k = kSsimWindow;
  if (a.height < k || a.width < k)
    throw DimensionError("ssim: images must be at least " + std::to_string(k) + "x" + std::to_string(k));
  const auto win = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const std::size_t h = a.height, w = a.width;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    const auto pa = a.plane(c), pb = b.plane(c);
    std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, win, k);
    const auto mu_b = filter_valid(pb, h, w, win, k);
    const auto e_aa = filter_valid(aa, h, w, win, k);
    const auto e_bb = filter_valid(bb, h, w, win, k);
    const auto e_ab = filter_valid(ab, h, w, win, k);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

MetricResult compare_images(const Image& a, const Image& b, double peak) {
  MetricResult r;
  r.mse = mse(a, b);
  r.psnr_db = psnr_from_mse(r.mse, peak);
  r.ssim = ssim(a, b, peak);
  r.mae = mae(a, b);
  return r;
}

}  // namespace deblur
