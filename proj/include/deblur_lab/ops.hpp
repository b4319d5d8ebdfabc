#pragma once

// Differentiable operations over deblur::Tensor.
//
// Image-like tensors are [H, W, C] (channels last); token matrices are [N, D].
// Broadcasting is limited to scalar-with-tensor and bias-over-last-axis.

#include <cstdint>
#include <vector>

#include "deblur_lab/tensor.hpp"

namespace deblur {

enum class Padding { kSame, kValid };

struct ConvSpec {
  int kernel_height = 3;
  int kernel_width = 3;
  int stride = 1;
  Padding padding = Padding::kSame;
  int in_channels = 1;
  int out_channels = 1;

  void validate() const;
};

// Cross-correlation. input [H,W,Cin], weights [kh,kw,Cin,Cout], bias [Cout].
// With `same` padding the output is ceil(H/stride) x ceil(W/stride).
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

// Adjoint of conv2d. input [H,W,Cin], weights [kh,kw,Cout,Cin], bias [Cout].
// `same`: output H*stride x W*stride; `valid`: (H-1)*stride+kh.
Tensor conv2d_transpose(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

// Per-channel "valid" correlation with a constant [kh,kw] window; used for SSIM statistics.
Tensor filter2d_valid(const Tensor& input, const std::vector<double>& window, int kh, int kw);

// Pointwise
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// b has shape [x.shape().back()] and is added along the last axis.
Tensor add_bias(const Tensor& x, const Tensor& b);

// Reductions to a [1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Joins tensors along the last axis; all leading dims must agree.
Tensor concat_last(const std::vector<Tensor>& parts);

// Normalizes the last axis to zero mean / unit variance, then applies gamma, beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, bool training);

// Matrices
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);
// x [N, Din] * w [Din, Dout] + b [Dout]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

// out[i] = x[index[i]]; the backward pass scatters.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape, const char* op_name = "gather");
Tensor reshape(const Tensor& x, Shape new_shape);
// Columns [begin, end) of a 2-D tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

// [H,W,C] -> [(H/p)*(W/p), p*p*C], patches in raster order, (py, px, c) inside.
Tensor patchify(const Tensor& x, std::size_t patch);
// Inverse of patchify.
Tensor unpatchify(const Tensor& tokens, std::size_t grid_h, std::size_t grid_w, std::size_t patch,
                  std::size_t channels);

struct AttentionSpec {
  int embed_dim = 256;
  int num_heads = 4;
  double dropout_rate = 0.0;

  int head_dim() const { return embed_dim / num_heads; }
  void validate() const;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // w*: [D, D], b*: [D]
};

struct AttentionOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  // When set, receives the per-head [N, N] attention matrices (post-softmax, pre-dropout).
  std::vector<Tensor>* attention_out = nullptr;
};

Tensor multi_head_attention(const Tensor& tokens, const AttentionSpec& spec, const AttentionParams& params,
                            const AttentionOptions& options = {});

}  // namespace deblur
