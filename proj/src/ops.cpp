#include "deblur_lab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
}

// Accumulates g into t's gradient if t participates in autodiff.
template <typename F>
void accumulate(Tensor t, F&& body) {
  if (!t.requires_grad()) return;
  body(t.grad_buffer());
}

template <typename F, typename D>
Tensor unary(const Tensor& x, const char* name, F&& f, D&& dfdx) {
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Tensor xc = x;
  return make_op_result(x.shape(), std::move(out), name, {x}, [xc, dfdx](std::span<const double> g) mutable {
    auto in = xc.values();
    accumulate(xc, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(in[i]);
    });
  });
}

// Geometry of a strided cross-correlation from [H,W,Cin] to [OH,OW,Cout].
struct ConvGeometry {
  std::size_t h, w, cin, oh, ow, cout, kh, kw, stride;
  std::ptrdiff_t pad_top, pad_left;
};

std::size_t same_out(std::size_t n, std::size_t s) { return (n + s - 1) / s; }

ConvGeometry make_geometry(std::size_t h, std::size_t w, std::size_t cin, std::size_t cout, const ConvSpec& spec) {
  ConvGeometry g{};
  g.h = h;
  g.w = w;
  g.cin = cin;
  g.cout = cout;
  g.kh = static_cast<std::size_t>(spec.kernel_height);
  g.kw = static_cast<std::size_t>(spec.kernel_width);
  g.stride = static_cast<std::size_t>(spec.stride);
  if (spec.padding == Padding::kSame) {
    g.oh = same_out(h, g.stride);
    g.ow = same_out(w, g.stride);
    const auto pad_h = static_cast<std::ptrdiff_t>((g.oh - 1) * g.stride + g.kh) - static_cast<std::ptrdiff_t>(h);
    const auto pad_w = static_cast<std::ptrdiff_t>((g.ow - 1) * g.stride + g.kw) - static_cast<std::ptrdiff_t>(w);
    g.pad_top = std::max<std::ptrdiff_t>(pad_h, 0) / 2;
    g.pad_left = std::max<std::ptrdiff_t>(pad_w, 0) / 2;
  } else {
    if (h < g.kh || w < g.kw)
      throw DimensionError("conv: valid padding needs input >= kernel, got " + std::to_string(h) + "x" +
                           std::to_string(w));
    g.oh = (h - g.kh) / g.stride + 1;
    g.ow = (w - g.kw) / g.stride + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

// y[OH,OW,Cout] += corr(x, w)
void correlate(const ConvGeometry& g, const double* x, const double* w, double* y) {
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      double* yr = y + (oy * g.ow + ox) * g.cout;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const double* xp = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const double* wp = w + (ky * g.kw + kx) * g.cin * g.cout;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double xv = xp[ci];
            const double* wr = wp + ci * g.cout;
            for (std::size_t co = 0; co < g.cout; ++co) yr[co] += xv * wr[co];
          }
        }
      }
    }
  }
}

// x[H,W,Cin] += corr^T(y, w)
void correlate_adjoint(const ConvGeometry& g, const double* y, const double* w, double* x) {
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      const double* yr = y + (oy * g.ow + ox) * g.cout;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          double* xp = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const double* wp = w + (ky * g.kw + kx) * g.cin * g.cout;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double* wr = wp + ci * g.cout;
            double acc = 0.0;
            for (std::size_t co = 0; co < g.cout; ++co) acc += wr[co] * yr[co];
            xp[ci] += acc;
          }
        }
      }
    }
  }
}

// gw[kh,kw,Cin,Cout] += d<corr(x,w), y>/dw
void correlate_weight_grad(const ConvGeometry& g, const double* x, const double* y, double* gw) {
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      const double* yr = y + (oy * g.ow + ox) * g.cout;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const double* xp = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          double* wp = gw + (ky * g.kw + kx) * g.cin * g.cout;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const double xv = xp[ci];
            double* wr = wp + ci * g.cout;
            for (std::size_t co = 0; co < g.cout; ++co) wr[co] += xv * yr[co];
          }
        }
      }
    }
  }
}

void check_conv_operands(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec,
                         bool transpose, const char* op) {
  spec.validate();
  require_rank(input, 3, op);
  require_rank(weights, 4, op);
  require_rank(bias, 1, op);
  const auto& ws = weights.shape();
  const auto kh = static_cast<std::size_t>(spec.kernel_height);
  const auto kw = static_cast<std::size_t>(spec.kernel_width);
  const auto cin = static_cast<std::size_t>(spec.in_channels);
  const auto cout = static_cast<std::size_t>(spec.out_channels);
  const Shape expected = transpose ? Shape{kh, kw, cout, cin} : Shape{kh, kw, cin, cout};
  if (ws != expected)
    throw DimensionError(std::string(op) + ": weight shape " + shape_str(ws) + " does not match spec " +
                         shape_str(expected));
  if (input.dim(2) != cin)
    throw DimensionError(std::string(op) + ": input has " + std::to_string(input.dim(2)) +
                         " channels, spec expects " + std::to_string(cin));
  if (bias.dim(0) != cout)
    throw DimensionError(std::string(op) + ": bias length " + std::to_string(bias.dim(0)) + " != out_channels " +
                         std::to_string(cout));
}

}  // namespace

void ConvSpec::validate() const {
  if (kernel_height <= 0 || kernel_width <= 0 || kernel_height % 2 == 0 || kernel_width % 2 == 0)
    throw ConfigError("conv kernel dimensions must be odd and positive");
  if (stride <= 0) throw ConfigError("conv stride must be positive");
  if (in_channels <= 0 || out_channels <= 0) throw ConfigError("conv channel counts must be positive");
}

void AttentionSpec::validate() const {
  if (embed_dim <= 0 || num_heads <= 0) throw ConfigError("attention dims must be positive");
  if (embed_dim % num_heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("attention dropout must be in [0, 1)");
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  check_conv_operands(input, weights, bias, spec, false, "conv2d");
  const ConvGeometry g = make_geometry(input.dim(0), input.dim(1), input.dim(2), weights.dim(3), spec);
  std::vector<double> out(g.oh * g.ow * g.cout);
  auto b = bias.values();
  for (std::size_t p = 0; p < g.oh * g.ow; ++p) std::copy(b.begin(), b.end(), out.begin() + p * g.cout);
  correlate(g, input.values().data(), weights.values().data(), out.data());
  return make_op_result({g.oh, g.ow, g.cout}, std::move(out), "conv2d", {input, weights, bias},
                        [g, input, weights, bias](std::span<const double> gy) {
                          accumulate(input, [&](std::vector<double>& gx) {
                            correlate_adjoint(g, gy.data(), weights.values().data(), gx.data());
                          });
                          accumulate(weights, [&](std::vector<double>& gw) {
                            correlate_weight_grad(g, input.values().data(), gy.data(), gw.data());
                          });
                          accumulate(bias, [&](std::vector<double>& gb) {
                            for (std::size_t p = 0; p < g.oh * g.ow; ++p)
                              for (std::size_t c = 0; c < g.cout; ++c) gb[c] += gy[p * g.cout + c];
                          });
                        });
}

Tensor conv2d_transpose(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  check_conv_operands(input, weights, bias, spec, true, "conv2d_transpose");
  const std::size_t s = static_cast<std::size_t>(spec.stride);
  const std::size_t h = input.dim(0), w = input.dim(1);
  std::size_t oh = 0, ow = 0;
  if (spec.padding == Padding::kSame) {
    oh = h * s;
    ow = w * s;
  } else {
    oh = (h - 1) * s + static_cast<std::size_t>(spec.kernel_height);
    ow = (w - 1) * s + static_cast<std::size_t>(spec.kernel_width);
  }
  const std::size_t cout = static_cast<std::size_t>(spec.out_channels);
  // The forward correlation this op is the adjoint of: [oh,ow,cout] -> [h,w,cin].
  const ConvGeometry g = make_geometry(oh, ow, cout, input.dim(2), spec);
  if (g.oh != h || g.ow != w)
    throw DimensionError("conv2d_transpose: inconsistent geometry for input " + shape_str(input.shape()));
  std::vector<double> out(oh * ow * cout);
  auto b = bias.values();
  for (std::size_t p = 0; p < oh * ow; ++p) std::copy(b.begin(), b.end(), out.begin() + p * cout);
  correlate_adjoint(g, input.values().data(), weights.values().data(), out.data());
  return make_op_result({oh, ow, cout}, std::move(out), "conv2d_transpose", {input, weights, bias},
                        [g, input, weights, bias](std::span<const double> gy) {
                          accumulate(input, [&](std::vector<double>& gx) {
                            correlate(g, gy.data(), weights.values().data(), gx.data());
                          });
                          accumulate(weights, [&](std::vector<double>& gw) {
                            correlate_weight_grad(g, gy.data(), input.values().data(), gw.data());
                          });
                          accumulate(bias, [&](std::vector<double>& gb) {
                            for (std::size_t p = 0; p < g.h * g.w; ++p)
                              for (std::size_t c = 0; c < g.cin; ++c) gb[c] += gy[p * g.cin + c];
                          });
                        });
}

Tensor filter2d_valid(const Tensor& input, const std::vector<double>& window, int kh, int kw) {
  require_rank(input, 3, "filter2d_valid");
  if (kh <= 0 || kw <= 0 || window.size() != static_cast<std::size_t>(kh * kw))
    throw DimensionError("filter2d_valid: window size does not match kh*kw");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  const auto wh = static_cast<std::size_t>(kh), ww = static_cast<std::size_t>(kw);
  if (h < wh || w < ww)
    throw DimensionError("filter2d_valid: input " + shape_str(input.shape()) + " smaller than window " +
                         std::to_string(kh) + "x" + std::to_string(kw));
  const std::size_t oh = h - wh + 1, ow = w - ww + 1;
  auto x = input.values();
  std::vector<double> out(oh * ow * c, 0.0);
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* o = &out[(oy * ow + ox) * c];
      for (std::size_t ky = 0; ky < wh; ++ky)
        for (std::size_t kx = 0; kx < ww; ++kx) {
          const double k = window[ky * ww + kx];
          const double* xp = &x[((oy + ky) * w + ox + kx) * c];
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += k * xp[ch];
        }
    }
  return make_op_result({oh, ow, c}, std::move(out), "filter2d_valid", {input},
                        [input, window, wh, ww, oh, ow, w, c](std::span<const double> gy) {
                          accumulate(input, [&](std::vector<double>& gx) {
                            for (std::size_t oy = 0; oy < oh; ++oy)
                              for (std::size_t ox = 0; ox < ow; ++ox) {
                                const double* g = &gy[(oy * ow + ox) * c];
                                for (std::size_t ky = 0; ky < wh; ++ky)
                                  for (std::size_t kx = 0; kx < ww; ++kx) {
                                    const double k = window[ky * ww + kx];
                                    double* gp = &gx[((oy + ky) * w + ox + kx) * c];
                                    for (std::size_t ch = 0; ch < c; ++ch) gp[ch] += k * g[ch];
                                  }
                              }
                          });
                        });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, "sigmoid", f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Tensor gelu(const Tensor& x) {
  // Exact (erf) form.
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; }, [](double) { return 1.0; });
}

namespace {

// Elementwise binary op; a scalar ([1]) operand broadcasts against the other.
template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F&& f, DA&& dfa, DB&& dfb) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) require_same_shape(a, b, name);
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  return make_op_result(out_shape, std::move(out), name, {a, b},
                        [a, b, a_scalar, b_scalar, dfa, dfb](std::span<const double> g) {
                          auto av = a.values();
                          auto bv = b.values();
                          accumulate(a, [&](std::vector<double>& ga) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              ga[a_scalar ? 0 : i] += g[i] * dfa(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
                          });
                          accumulate(b, [&](std::vector<double>& gb) {
                            for (std::size_t i = 0; i < g.size(); ++i)
                              gb[b_scalar ? 0 : i] += g[i] * dfb(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
                          });
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank(b, 1, "add_bias");
  const std::size_t c = x.shape().back();
  if (b.dim(0) != c)
    throw DimensionError("add_bias: bias length " + std::to_string(b.dim(0)) + " != last axis " +
                         std::to_string(c));
  auto xv = x.values();
  auto bv = b.values();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % c];
  return make_op_result(x.shape(), std::move(out), "add_bias", {x, b}, [x, b, c](std::span<const double> g) {
    accumulate(x, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    accumulate(b, [&](std::vector<double>& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
    });
  });
}

Tensor sum(const Tensor& x) {
  auto v = x.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  return make_op_result({1}, {s}, "sum", {x}, [x](std::span<const double> g) {
    accumulate(x, [&](std::vector<double>& gx) {
      for (auto& e : gx) e += g[0];
    });
  });
}

Tensor mean(const Tensor& x) {
  auto v = x.values();
  const double n = static_cast<double>(v.size());
  const double s = std::accumulate(v.begin(), v.end(), 0.0) / n;
  return make_op_result({1}, {s}, "mean", {x}, [x, n](std::span<const double> g) {
    accumulate(x, [&](std::vector<double>& gx) {
      for (auto& e : gx) e += g[0] / n;
    });
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  const Shape& first = parts[0].shape();
  Shape lead(first.begin(), first.end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
      throw DimensionError("concat_last: leading dims differ, " + shape_str(first) + " vs " + shape_str(s));
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = shape_numel(lead.empty() ? Shape{1} : lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return make_op_result(out_shape, std::move(out), "concat", parts,
                        [parts, widths, rows, total](std::span<const double> g) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < parts.size(); ++k) {
                            accumulate(parts[k], [&](std::vector<double>& gp) {
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < widths[k]; ++j)
                                  gp[r * widths[k] + j] += g[r * total + offset + j];
                            });
                            offset += widths[k];
                          }
                        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: affine parameters must have length " + std::to_string(d));
  const std::size_t rows = x.numel() / d;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * is;
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return make_op_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
                         rows](std::span<const double> g) {
                          auto gv = gamma.values();
                          accumulate(gamma, [&](std::vector<double>& gg) {
                            for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
                          });
                          accumulate(beta, [&](std::vector<double>& gb) {
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                          });
                          accumulate(x, [&](std::vector<double>& gx) {
                            const double n = static_cast<double>(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                              double s1 = 0.0, s2 = 0.0;
                              for (std::size_t j = 0; j < d; ++j) {
                                const double gh = g[r * d + j] * gv[j];
                                s1 += gh;
                                s2 += gh * xhat[r * d + j];
                              }
                              for (std::size_t j = 0; j < d; ++j) {
                                const double gh = g[r * d + j] * gv[j];
                                gx[r * d + j] += inv_std[r] * (gh - s1 / n - xhat[r * d + j] * s2 / n);
                              }
                            }
                          });
                        });
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_op_result(x.shape(), std::move(out), "dropout", {x}, [x, mask = std::move(mask)](std::span<const double> g) {
    accumulate(x, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  });
}

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* br = b + p * n;
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* g, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double* gr = g + i * n;
      const double* br = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
      c[i * k + p] += acc;
    }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* gr = g + i * n;
      double* cr = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * gr[j];
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  return make_op_result({m, n}, std::move(out), "matmul", {a, b}, [a, b, m, k, n](std::span<const double> g) {
    accumulate(a, [&](std::vector<double>& ga) { gemm_nt(m, n, k, g.data(), b.values().data(), ga.data()); });
    accumulate(b, [&](std::vector<double>& gb) { gemm_tn(m, k, n, a.values().data(), g.data(), gb.data()); });
  });
}

Tensor transpose2d(const Tensor& x) {
  require_rank(x, 2, "transpose2d");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> index(r * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < r; ++j) index[i * r + j] = j * c + i;
  return gather(x, std::move(index), {c, r}, "transpose");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = &xv[i * c];
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(xr[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  std::vector<double> probs = out;
  return make_op_result({r, c}, std::move(out), "softmax", {x},
                        [x, probs = std::move(probs), r, c](std::span<const double> g) {
                          accumulate(x, [&](std::vector<double>& gx) {
                            for (std::size_t i = 0; i < r; ++i) {
                              double dot = 0.0;
                              for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * probs[i * c + j];
                              for (std::size_t j = 0; j < c; ++j)
                                gx[i * c + j] += probs[i * c + j] * (g[i * c + j] - dot);
                            }
                          });
                        });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape, const char* op_name) {
  if (index.size() != shape_numel(out_shape))
    throw DimensionError(std::string(op_name) + ": index count does not match output shape " +
                         shape_str(out_shape));
  auto xv = x.values();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw DimensionError(std::string(op_name) + ": index out of range");
    out[i] = xv[index[i]];
  }
  return make_op_result(std::move(out_shape), std::move(out), op_name, {x},
                        [x, index = std::move(index)](std::span<const double> g) {
                          accumulate(x, [&](std::vector<double>& gx) {
                            for (std::size_t i = 0; i < g.size(); ++i) gx[index[i]] += g[i];
                          });
                        });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(new_shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op_result(std::move(new_shape), std::move(out), "reshape", {x}, [x](std::span<const double> g) {
    accumulate(x, [&](std::vector<double>& gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (begin >= end || end > c) throw DimensionError("slice_cols: bad column range");
  const std::size_t w = end - begin;
  std::vector<std::size_t> index(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) index[i * w + j] = i * c + begin + j;
  return gather(x, std::move(index), {r, w}, "slice_cols");
}

namespace {

std::vector<std::size_t> patch_index(std::size_t gh, std::size_t gw, std::size_t p, std::size_t c) {
  const std::size_t w = gw * p;
  std::vector<std::size_t> index;
  index.reserve(gh * gw * p * p * c);
  for (std::size_t ty = 0; ty < gh; ++ty)
    for (std::size_t tx = 0; tx < gw; ++tx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t ch = 0; ch < c; ++ch) index.push_back(((ty * p + py) * w + tx * p + px) * c + ch);
  return index;
}

}  // namespace

Tensor patchify(const Tensor& x, std::size_t patch) {
  require_rank(x, 3, "patchify");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw DimensionError("patchify: " + shape_str(x.shape()) + " not divisible into " + std::to_string(patch) +
                         "-pixel patches");
  const std::size_t gh = h / patch, gw = w / patch;
  return gather(x, patch_index(gh, gw, patch, c), {gh * gw, patch * patch * c}, "patchify");
}

Tensor unpatchify(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w, std::size_t patch,
                  std::size_t channels) {
  require_rank(tokens, 2, "unpatchify");
  if (tokens.dim(0) != grid_h * grid_w || tokens.dim(1) != patch * patch * channels)
    throw DimensionError("unpatchify: token matrix " + shape_str(tokens.shape()) + " does not fit grid");
  // Invert the patchify permutation.
  const auto fwd = patch_index(grid_h, grid_w, patch, channels);
  std::vector<std::size_t> inverse(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inverse[fwd[i]] = i;
  return gather(tokens, std::move(inverse), {grid_h * patch, grid_w * patch, channels}, "unpatchify");
}

Tensor multi_head_attention(const Tensor& tokens, const AttentionSpec& spec, const AttentionParams& params,
                            const AttentionOptions& options) {
  spec.validate();
  require_rank(tokens, 2, "multi_head_attention");
  const auto d = static_cast<std::size_t>(spec.embed_dim);
  if (tokens.dim(1) != d)
    throw DimensionError("multi_head_attention: token width " + std::to_string(tokens.dim(1)) +
                         " != embed_dim " + std::to_string(d));
  const auto hd = static_cast<std::size_t>(spec.head_dim());
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  const Tensor q = linear(tokens, params.wq, params.bq);
  const Tensor k = linear(tokens, params.wk, params.bk);
  const Tensor v = linear(tokens, params.wv, params.bv);

  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < static_cast<std::size_t>(spec.num_heads); ++h) {
    const Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
    const Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
    const Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
    const Tensor weights = softmax_rows(scale(matmul(qh, transpose2d(kh)), inv_sqrt));
    if (options.attention_out) options.attention_out->push_back(weights);
    const Tensor dropped = dropout(weights, spec.dropout_rate, derive_seed(options.dropout_seed, h), options.training);
    heads.push_back(matmul(dropped, vh));
  }
  return linear(concat_last(heads), params.wo, params.bo);
}

}  // namespace deblur
