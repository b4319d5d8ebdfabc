#include "deblur_lab/model.hpp"

#include <algorithm>
#include <cmath>

#include "deblur_lab/errors.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

namespace {

std::string enc_name(std::size_t i) { return "enc_conv" + std::to_string(i + 1); }
std::string dec_name(std::size_t i) { return "dec_convT" + std::to_string(i + 1); }
std::string vit_name(int layer, const char* part) { return "vit" + std::to_string(layer) + "." + part; }

ConvSpec conv_spec(int kernel, int stride, int cin, int cout) {
  ConvSpec s;
  s.kernel_height = kernel;
  s.kernel_width = kernel;
  s.stride = stride;
  s.padding = Padding::kSame;
  s.in_channels = cin;
  s.out_channels = cout;
  return s;
}

// Index of an encoder stage named enc_convN, or -1.
int encoder_index(const std::string& name, std::size_t stages) {
  for (std::size_t i = 0; i < stages; ++i)
    if (name == enc_name(i)) return static_cast<int>(i);
  return -1;
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& stage) {
  if (t.shape() != shape)
    throw DimensionError("model stage '" + stage + "' produced " + shape_str(t.shape()) + ", expected " +
                         shape_str(shape));
}

}  // namespace

int ModelConfig::downsample_factor() const {
  int f = 1;
  for (int s : encoder_strides) f *= s;
  return f;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (img_size[0] <= 0 || img_size[1] <= 0) fail("img_size must be positive");
  if (in_channels <= 0) fail("in_channels must be positive");
  if (patch_px <= 0) fail("patch_px must be positive");
  if (img_size[0] % patch_px != 0 || img_size[1] % patch_px != 0) fail("img_size must be divisible by patch_px");
  if (encoder_channels.size() != encoder_strides.size() || encoder_channels.empty())
    fail("encoder_channels and encoder_strides must be non-empty and equal length");
  for (int c : encoder_channels)
    if (c <= 0) fail("encoder channels must be positive");
  for (int s : encoder_strides)
    if (s <= 0) fail("encoder strides must be positive");
  const int down = downsample_factor();
  if (img_size[0] % down != 0 || img_size[1] % down != 0) fail("img_size must be divisible by the encoder stride product");
  if (patch_px % down != 0) fail("patch_px must be a multiple of the encoder stride product");
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (mlp_dim <= 0 || num_layers < 0) fail("mlp_dim must be positive and num_layers nonnegative");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (token_channels < 0 || vit_out_channels <= 0) fail("token/vit_out channels invalid");
  if (decoder_channels.size() != decoder_strides.size() || decoder_channels.empty())
    fail("decoder_channels and decoder_strides must be non-empty and equal length");
  int up = 1;
  for (int s : decoder_strides) {
    if (s <= 0) fail("decoder strides must be positive");
    up *= s;
  }
  for (int c : decoder_channels)
    if (c <= 0) fail("decoder channels must be positive");
  if (up != down) fail("decoder upsampling (" + std::to_string(up) + ") must undo encoder downsampling (" +
                       std::to_string(down) + ")");
  if (skip_sources.size() > decoder_channels.size()) fail("more skip sources than decoder stages");

  // Resolution bookkeeping for skips.
  std::vector<int> enc_h;
  int h = img_size[0];
  for (int s : encoder_strides) {
    h = (h + s - 1) / s;
    enc_h.push_back(h);
  }
  int dec_in_h = img_size[0] / down;
  for (std::size_t i = 0; i < skip_sources.size(); ++i) {
    if (!skip_sources[i].empty()) {
      const int idx = encoder_index(skip_sources[i], encoder_channels.size());
      if (idx < 0) fail("unknown skip source '" + skip_sources[i] + "'");
      if (enc_h[static_cast<std::size_t>(idx)] != dec_in_h)
        fail("skip '" + skip_sources[i] + "' at resolution " + std::to_string(enc_h[static_cast<std::size_t>(idx)]) +
             " does not match decoder stage " + std::to_string(i + 1) + " input " + std::to_string(dec_in_h));
    }
    dec_in_h *= decoder_strides[i];
  }
}

ModelConfig ModelConfig::reduced(int img) {
  ModelConfig c;
  c.img_size = {img, img};
  c.patch_px = img / 4;
  c.embed_dim = 32;
  c.num_heads = 4;
  c.mlp_dim = 64;
  c.num_layers = 1;
  c.dropout = 0.0;
  c.encoder_channels = {8, 16, 16, 24, 24};
  c.token_channels = 8;
  c.vit_out_channels = 4;
  c.decoder_channels = {24, 16, 8};
  return c;
}

int count_receptive_tokens(const ModelConfig& config) {
  config.validate();
  return config.grid_h() * config.grid_w();
}

void ModelParams::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing model parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("missing model parameter '" + name + "'");
  return entries_[it->second].second;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

ModelParams build_model(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelParams p;
  auto he_uniform = [&](Shape shape, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-limit, limit);
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };
  auto normal = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, 0.02);
    return Tensor::from_values(std::move(shape), std::move(v), true);
  };
  auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };
  auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };
  auto sz = [](int v) { return static_cast<std::size_t>(v); };

  std::size_t cin = sz(config.in_channels);
  std::vector<std::size_t> enc_out;
  for (std::size_t i = 0; i < config.encoder_channels.size(); ++i) {
    const std::size_t cout = sz(config.encoder_channels[i]);
    p.add(enc_name(i) + ".w", he_uniform({3, 3, cin, cout}, 9 * cin));
    p.add(enc_name(i) + ".b", zeros(cout));
    enc_out.push_back(cout);
    cin = cout;
  }
  if (config.token_channels > 0) {
    const std::size_t tc = sz(config.token_channels);
    p.add("token_reduce.w", he_uniform({1, 1, cin, tc}, cin));
    p.add("token_reduce.b", zeros(tc));
    cin = tc;
  }
  const std::size_t fp = sz(config.feature_patch());
  const std::size_t d = sz(config.embed_dim);
  const std::size_t tokens = sz(config.grid_h() * config.grid_w());
  p.add("patch_embed.w", normal({fp * fp * cin, d}));
  p.add("patch_embed.b", zeros(d));
  p.add("pos_embed", normal({tokens, d}));
  for (int l = 0; l < config.num_layers; ++l) {
    p.add(vit_name(l, "ln1.gamma"), ones(d));
    p.add(vit_name(l, "ln1.beta"), zeros(d));
    for (const char* m : {"wq", "wk", "wv", "wo"}) {
      p.add(vit_name(l, "attn.") + m, normal({d, d}));
      p.add(vit_name(l, "attn.b") + std::string(m + 1), zeros(d));
    }
    p.add(vit_name(l, "ln2.gamma"), ones(d));
    p.add(vit_name(l, "ln2.beta"), zeros(d));
    p.add(vit_name(l, "mlp1.w"), normal({d, sz(config.mlp_dim)}));
    p.add(vit_name(l, "mlp1.b"), zeros(sz(config.mlp_dim)));
    p.add(vit_name(l, "mlp2.w"), normal({sz(config.mlp_dim), d}));
    p.add(vit_name(l, "mlp2.b"), zeros(d));
  }
  p.add("vit_norm.gamma", ones(d));
  p.add("vit_norm.beta", zeros(d));
  const std::size_t vo = sz(config.vit_out_channels);
  p.add("unembed.w", normal({d, fp * fp * vo}));
  p.add("unembed.b", zeros(fp * fp * vo));

  cin = vo;
  for (std::size_t i = 0; i < config.decoder_channels.size(); ++i) {
    if (i < config.skip_sources.size() && !config.skip_sources[i].empty())
      cin += enc_out[static_cast<std::size_t>(encoder_index(config.skip_sources[i], enc_out.size()))];
    const std::size_t cout = sz(config.decoder_channels[i]);
    p.add(dec_name(i) + ".w", he_uniform({3, 3, cout, cin}, 9 * cin));
    p.add(dec_name(i) + ".b", zeros(cout));
    cin = cout;
  }
  p.add("out_conv.w", he_uniform({3, 3, cin, 3}, 9 * cin));
  p.add("out_conv.b", zeros(3));
  return p;
}

Tensor forward(const ModelParams& params, const ModelConfig& config, const Tensor& input,
               const ForwardOptions& options) {
  config.validate();
  const auto sz = [](int v) { return static_cast<std::size_t>(v); };
  const Shape in_shape{sz(config.img_size[0]), sz(config.img_size[1]), sz(config.in_channels)};
  expect_shape(input, in_shape, "input");
  const bool training = options.mode == ForwardMode::kTrain;
  std::uint64_t dropout_site = 0;
  auto drop = [&](const Tensor& t) {
    return dropout(t, config.dropout, derive_seed(options.dropout_seed, dropout_site++), training);
  };

  // Encoder
  std::vector<Tensor> enc;
  Tensor x = input;
  int cin = config.in_channels;
  for (std::size_t i = 0; i < config.encoder_channels.size(); ++i) {
    const int cout = config.encoder_channels[i];
    x = relu(conv2d(x, params.at(enc_name(i) + ".w"), params.at(enc_name(i) + ".b"),
                    conv_spec(3, config.encoder_strides[i], cin, cout)));
    enc.push_back(x);
    cin = cout;
  }
  const int down = config.downsample_factor();
  const std::size_t fh = sz(config.img_size[0] / down), fw = sz(config.img_size[1] / down);
  expect_shape(x, {fh, fw, sz(cin)}, "encoder");

  // Tokens
  if (config.token_channels > 0) {
    x = conv2d(x, params.at("token_reduce.w"), params.at("token_reduce.b"),
               conv_spec(1, 1, cin, config.token_channels));
    cin = config.token_channels;
  }
  const std::size_t fp = sz(config.feature_patch());
  const std::size_t d = sz(config.embed_dim);
  Tensor tokens = linear(patchify(x, fp), params.at("patch_embed.w"), params.at("patch_embed.b"));
  tokens = add(tokens, params.at("pos_embed"));
  const std::size_t n_tokens = sz(config.grid_h() * config.grid_w());
  expect_shape(tokens, {n_tokens, d}, "patch_embed");

  // Transformer
  AttentionSpec aspec{config.embed_dim, config.num_heads, config.dropout};
  for (int l = 0; l < config.num_layers; ++l) {
    auto P = [&](const char* part) -> const Tensor& { return params.at(vit_name(l, part)); };
    const Tensor h1 = layer_norm(tokens, P("ln1.gamma"), P("ln1.beta"));
    AttentionParams ap{P("attn.wq"), P("attn.bq"), P("attn.wk"), P("attn.bk"),
                       P("attn.wv"), P("attn.bv"), P("attn.wo"), P("attn.bo")};
    AttentionOptions ao;
    ao.training = training;
    ao.dropout_seed = derive_seed(options.dropout_seed, 1000 + static_cast<std::uint64_t>(l));
    tokens = add(tokens, drop(multi_head_attention(h1, aspec, ap, ao)));
    const Tensor h2 = layer_norm(tokens, P("ln2.gamma"), P("ln2.beta"));
    Tensor m = drop(gelu(linear(h2, P("mlp1.w"), P("mlp1.b"))));
    m = drop(linear(m, P("mlp2.w"), P("mlp2.b")));
    tokens = add(tokens, m);
  }
  tokens = layer_norm(tokens, params.at("vit_norm.gamma"), params.at("vit_norm.beta"));
  expect_shape(tokens, {n_tokens, d}, "transformer");

  // Back to a feature map
  const Tensor patches = linear(tokens, params.at("unembed.w"), params.at("unembed.b"));
  x = unpatchify(patches, sz(config.grid_h()), sz(config.grid_w()), fp, sz(config.vit_out_channels));
  cin = config.vit_out_channels;
  expect_shape(x, {fh, fw, sz(cin)}, "unembed");

  // Decoder
  for (std::size_t i = 0; i < config.decoder_channels.size(); ++i) {
    if (i < config.skip_sources.size() && !config.skip_sources[i].empty()) {
      const auto idx = static_cast<std::size_t>(encoder_index(config.skip_sources[i], enc.size()));
      const Tensor& skip = enc[idx];
      if (skip.dim(0) != x.dim(0) || skip.dim(1) != x.dim(1))
        throw DimensionError("model stage '" + dec_name(i) + "': skip " + config.skip_sources[i] + " " +
                             shape_str(skip.shape()) + " does not match " + shape_str(x.shape()));
      x = concat_last({x, skip});
      cin += static_cast<int>(skip.dim(2));
    }
    const int cout = config.decoder_channels[i];
    x = relu(conv2d_transpose(x, params.at(dec_name(i) + ".w"), params.at(dec_name(i) + ".b"),
                              conv_spec(3, config.decoder_strides[i], cin, cout)));
    cin = cout;
  }
  Tensor out = sigmoid(conv2d(x, params.at("out_conv.w"), params.at("out_conv.b"), conv_spec(3, 1, cin, 3)));
  expect_shape(out, {in_shape[0], in_shape[1], 3}, "output");
  return out;
}

Image infer(const ModelParams& params, const ModelConfig& config, const Image& input) {
  NoGradGuard no_grad;
  const Tensor out = forward(params, config, to_tensor(input), {ForwardMode::kInfer, 0});
  return from_tensor(out);
}

}  // namespace deblur
