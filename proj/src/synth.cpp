#include "deblur_lab/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "deblur_lab/rng.hpp"

namespace deblur {

namespace {

constexpr int kGlyphW = 5, kGlyphH = 7, kGlyphCount = 40;

using Glyph = std::array<std::array<bool, kGlyphW>, kGlyphH>;

// Letter-like 5x7 bitmaps: a random mix of stems, bars and dots, fixed across runs.
const std::array<Glyph, kGlyphCount>& glyph_table() {
  static const auto table = [] {
    std::array<Glyph, kGlyphCount> t{};
    Rng rng(0x6C797068ULL);
    for (auto& g : t) {
      for (auto& row : g) row.fill(false);
      const int strokes = 2 + static_cast<int>(rng.below(3));
      for (int s = 0; s < strokes; ++s) {
        switch (rng.below(4)) {
          case 0: {  // vertical stem
            const int x = static_cast<int>(rng.below(kGlyphW));
            for (int y = 0; y < kGlyphH; ++y) g[y][x] = true;
            break;
          }
          case 1: {  // horizontal bar
            const int y = static_cast<int>(rng.below(kGlyphH));
            for (int x = 0; x < kGlyphW; ++x) g[y][x] = true;
            break;
          }
          case 2: {  // diagonal
            const bool up = rng.below(2) == 1;
            for (int y = 0; y < kGlyphH; ++y) g[y][std::min(kGlyphW - 1, (up ? kGlyphH - 1 - y : y) * kGlyphW / kGlyphH)] = true;
            break;
          }
          default: {  // bowl
            for (int y = 2; y < kGlyphH; ++y) g[y][0] = g[y][kGlyphW - 1] = true;
            for (int x = 0; x < kGlyphW; ++x) g[2][x] = g[kGlyphH - 1][x] = true;
          }
        }
      }
    }
    return t;
  }();
  return table;
}

void fill_rgb(Image& img, std::size_t y, std::size_t x, const std::array<double, 3>& rgb) {
  for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = rgb[c];
}

// Lays out glyph rows inside [y0,y1) x [x0,x1) with `scale` pixels per glyph pixel.
void draw_text(Image& img, Rng& rng, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1, int scale,
               const std::array<double, 3>& ink) {
  const auto& glyphs = glyph_table();
  const std::size_t gw = static_cast<std::size_t>((kGlyphW + 1) * scale);
  const std::size_t gh = static_cast<std::size_t>((kGlyphH + 3) * scale);
  for (std::size_t top = y0; top + gh <= y1 + 2 * static_cast<std::size_t>(scale); top += gh) {
    for (std::size_t left = x0; left + gw <= x1 + static_cast<std::size_t>(scale); left += gw) {
      if (rng.uniform() < 0.18) continue;  // word gap
      const Glyph& g = glyphs[rng.below(kGlyphCount)];
      for (int gy = 0; gy < kGlyphH; ++gy)
        for (int gx = 0; gx < kGlyphW; ++gx) {
          if (!g[gy][gx]) continue;
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) {
              const std::size_t y = top + static_cast<std::size_t>(gy * scale + sy);
              const std::size_t x = left + static_cast<std::size_t>(gx * scale + sx);
              if (y < y1 && x < x1) fill_rgb(img, y, x, ink);
            }
        }
    }
  }
}

}  // namespace

Image render_text_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  const double page = rng.uniform(0.85, 0.97);
  Image img(height, width, 3, page);
  const std::array<double, 3> ink{rng.uniform(0.02, 0.15), rng.uniform(0.02, 0.15), rng.uniform(0.02, 0.2)};
  const int scale = std::max(1, static_cast<int>(std::min(height, width) / 48));
  const std::size_t margin = static_cast<std::size_t>(scale) * 2;
  draw_text(img, rng, margin, height - margin, margin, width - margin, scale, ink);
  return img;
}

namespace {

// Sum of bilinearly interpolated random lattices (value noise), zero mean,
// one plane shared by all channels.
std::vector<double> value_noise(std::size_t height, std::size_t width, Rng& rng, const std::vector<int>& cells,
                                const std::vector<double>& amps) {
  std::vector<double> out(height * width, 0.0);
  for (std::size_t o = 0; o < cells.size(); ++o) {
    const auto cell = static_cast<std::size_t>(cells[o]);
    const std::size_t gh = height / cell + 2, gw = width / cell + 2;
    std::vector<double> grid(gh * gw);
    for (auto& g : grid) g = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = (y + 0.5) / static_cast<double>(cell);
      const auto y0 = static_cast<std::size_t>(fy);
      const double ty = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = (x + 0.5) / static_cast<double>(cell);
        const auto x0 = static_cast<std::size_t>(fx);
        const double tx = fx - static_cast<double>(x0);
        const double top = (1 - tx) * grid[y0 * gw + x0] + tx * grid[y0 * gw + x0 + 1];
        const double bot = (1 - tx) * grid[(y0 + 1) * gw + x0] + tx * grid[(y0 + 1) * gw + x0 + 1];
        out[y * width + x] += amps[o] * ((1 - ty) * top + ty * bot);
      }
    }
  }
  return out;
}

}  // namespace

Image render_scene_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  Image img(height, width, 3);
  std::array<double, 3> c0, c1;
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.25, 0.75);
    c1[c] = rng.uniform(0.25, 0.75);
  }
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double fy = static_cast<double>(height), fx = static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double t = std::clamp(0.5 + ((y / fy - 0.5) * sa + (x / fx - 0.5) * ca), 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (1 - t) * c0[c] + t * c1[c];
    }

  // Flat shapes whose colour stays within a moderate distance of the background.
  const int shapes = 3 + static_cast<int>(rng.below(5));
  for (int s = 0; s < shapes; ++s) {
    const double cy = rng.uniform(0.0, fy), cx = rng.uniform(0.0, fx);
    const double ry = rng.uniform(0.05, 0.3) * fy, rx = rng.uniform(0.05, 0.3) * fx;
    const bool ellipse = rng.below(2) == 0;
    std::array<double, 3> shift;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double magnitude = rng.uniform(0.08, 0.3);
    for (auto& d : shift) d = sign * magnitude + rng.uniform(-0.05, 0.05);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside)
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) += shift[c];
      }
  }

  // Fine texture, the detail motion blur removes first.
  const double grain = rng.uniform(0.03, 0.08);
  const auto tex = value_noise(height, width, rng, {32, 8, 3, 1}, {grain, grain, grain, 0.5 * grain});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) += tex[y * width + x];

  // A text block on a light label.
  const std::size_t bh = height / 5 + rng.below(height / 5), bw = width / 4 + rng.below(width / 4);
  const std::size_t by = rng.below(height - bh + 1), bx = rng.below(width - bw + 1);
  const std::array<double, 3> label{0.85, 0.85, 0.82};
  for (std::size_t y = by; y < by + bh; ++y)
    for (std::size_t x = bx; x < bx + bw; ++x) fill_rgb(img, y, x, label);
  const int scale = std::max(1, static_cast<int>(std::min(height, width) / 96));
  draw_text(img, rng, by + 2, by + bh - 2, bx + 2, bx + bw - 2, scale, {0.15, 0.15, 0.18});
  return clamp_unit(std::move(img));
}

}  // namespace deblur
