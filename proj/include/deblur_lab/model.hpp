#pragma once

// Hybrid CNN-ViT deblurring network.
//
//   encoder   5 x (3x3 conv + ReLU), strides per config (256 -> 64 by default)
//   tokens    optional 1x1 channel reduction, non-overlapping patches of the
//             feature map, linear patch embedding + learnable positions
//   ViT       pre-norm blocks: x += MHA(LN(x)); x += MLP(LN(x)), GELU MLP
//   unembed   final LN, linear token -> patch projection, un-patchify
//   decoder   transpose convs (+ ReLU), encoder skips concatenated at matching
//             resolutions, final 3x3 conv + sigmoid
//
// patch_px is measured in input pixels, so the patch on the feature map is
// patch_px / (product of encoder strides).

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deblur_lab/image.hpp"
#include "deblur_lab/ops.hpp"
#include "deblur_lab/tensor.hpp"

namespace deblur {

struct ModelConfig {
  std::array<int, 2> img_size{256, 256};
  int in_channels = 3;
  int patch_px = 32;
  int embed_dim = 256;
  int num_heads = 4;
  int mlp_dim = 1024;
  int num_layers = 2;
  double dropout = 0.1;
  std::vector<int> encoder_channels{32, 64, 64, 128, 128};
  std::vector<int> encoder_strides{2, 2, 1, 1, 1};
  // Channels after the 1x1 reduction in front of the patch embedding; 0 disables it.
  int token_channels = 64;
  // Channels of the feature map rebuilt from the transformer tokens.
  int vit_out_channels = 8;
  std::vector<int> decoder_channels{128, 64, 32};
  std::vector<int> decoder_strides{2, 2, 1};
  // skip_sources[i] is concatenated to the input of decoder stage i.
  std::vector<std::string> skip_sources{"enc_conv3", "enc_conv1"};
  std::uint64_t seed = 42;

  // Throws ConfigError on any inconsistency (including skip resolutions).
  void validate() const;

  int downsample_factor() const;
  int feature_patch() const { return patch_px / downsample_factor(); }
  int grid_h() const { return img_size[0] / patch_px; }
  int grid_w() const { return img_size[1] / patch_px; }

  // Small configurations used for gradient checks and toy training.
  static ModelConfig reduced(int img);
};

// Patch tokens fed to the transformer.
int count_receptive_tokens(const ModelConfig& config);

class ModelParams {
 public:
  void add(std::string name, Tensor tensor);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Registration order.
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t param_count() const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

ModelParams build_model(const ModelConfig& config);

enum class ForwardMode { kTrain, kInfer };

struct ForwardOptions {
  ForwardMode mode = ForwardMode::kInfer;
  std::uint64_t dropout_seed = 0;
};

// input must be in [0,1] with shape img_size x in_channels. Output [H,W,3] in (0,1).
Tensor forward(const ModelParams& params, const ModelConfig& config, const Tensor& input,
               const ForwardOptions& options = {});

Image infer(const ModelParams& params, const ModelConfig& config, const Image& input);

}  // namespace deblur
