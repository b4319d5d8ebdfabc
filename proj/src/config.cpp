#include "deblur_lab/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "deblur_lab/errors.hpp"

namespace deblur {

namespace {

using Setter = std::function<void(const Json&)>;

// Applies each key of `j` through its setter; unknown keys and type errors
// become ConfigError naming the section and key.
void overlay(const char* section, const Json& j, const std::map<std::string, Setter>& setters) {
  if (j.is_null()) return;
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(std::string(section) + ": unknown field '" + key + "'");
    try {
      it->second(value);
    } catch (const Json::exception& e) {
      throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

// Seeds may exceed 2^53; accept integers only.
Setter set_seed(std::uint64_t& field) {
  return [&field](const Json& v) {
    if (!v.is_number_integer()) throw ConfigError("seed must be an integer");
    field = v.get<std::uint64_t>();
  };
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"img_size", c.img_size},
              {"in_channels", c.in_channels},
              {"patch_px", c.patch_px},
              {"embed_dim", c.embed_dim},
              {"num_heads", c.num_heads},
              {"mlp_dim", c.mlp_dim},
              {"num_layers", c.num_layers},
              {"dropout", c.dropout},
              {"encoder_channels", c.encoder_channels},
              {"encoder_strides", c.encoder_strides},
              {"token_channels", c.token_channels},
              {"vit_out_channels", c.vit_out_channels},
              {"decoder_channels", c.decoder_channels},
              {"decoder_strides", c.decoder_strides},
              {"skip_sources", c.skip_sources},
              {"seed", c.seed}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c) {
  overlay("model", j,
          {{"img_size", set(c.img_size)},
           {"in_channels", set(c.in_channels)},
           {"patch_px", set(c.patch_px)},
           {"embed_dim", set(c.embed_dim)},
           {"num_heads", set(c.num_heads)},
           {"mlp_dim", set(c.mlp_dim)},
           {"num_layers", set(c.num_layers)},
           {"dropout", set(c.dropout)},
           {"encoder_channels", set(c.encoder_channels)},
           {"encoder_strides", set(c.encoder_strides)},
           {"token_channels", set(c.token_channels)},
           {"vit_out_channels", set(c.vit_out_channels)},
           {"decoder_channels", set(c.decoder_channels)},
           {"decoder_strides", set(c.decoder_strides)},
           {"skip_sources", set(c.skip_sources)},
           {"seed", set_seed(c.seed)}});
  c.validate();
  return c;
}

Json to_json(const LossWeights& w) {
  return Json{{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"delta", w.delta}};
}

LossWeights loss_weights_from_json(const Json& j, LossWeights w) {
  overlay("loss_weights", j,
          {{"alpha", set(w.alpha)}, {"beta", set(w.beta)}, {"gamma", set(w.gamma)}, {"delta", set(w.delta)}});
  w.validate();
  return w;
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs_max", c.epochs_max},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"early_stop_patience", c.early_stop_patience},
              {"lr_plateau_patience", c.lr_plateau_patience},
              {"lr_plateau_factor", c.lr_plateau_factor},
              {"min_lr", c.min_lr},
              {"epoch_time_budget_s", c.epoch_time_budget_s},
              {"loss_weights", to_json(c.loss_weights)},
              {"seed", c.seed},
              {"log_batches", c.log_batches}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  overlay("train", j,
          {{"epochs_max", set(c.epochs_max)},
           {"batch_size", set(c.batch_size)},
           {"lr", set(c.lr)},
           {"adam_beta1", set(c.adam_beta1)},
           {"adam_beta2", set(c.adam_beta2)},
           {"adam_eps", set(c.adam_eps)},
           {"early_stop_patience", set(c.early_stop_patience)},
           {"lr_plateau_patience", set(c.lr_plateau_patience)},
           {"lr_plateau_factor", set(c.lr_plateau_factor)},
           {"min_lr", set(c.min_lr)},
           {"epoch_time_budget_s", set(c.epoch_time_budget_s)},
           {"loss_weights", [&](const Json& v) { c.loss_weights = loss_weights_from_json(v, c.loss_weights); }},
           {"seed", set_seed(c.seed)},
           {"log_batches", set(c.log_batches)}});
  c.validate();
  return c;
}

Json to_json(const DeconvParams& p) {
  return Json{{"epsilon", p.epsilon}, {"nsr", p.nsr},       {"iterations", p.iterations}, {"tau", p.tau},
              {"lambda", p.lambda},   {"step", p.step},     {"tv_eps", p.tv_eps},         {"rl_floor", p.rl_floor}};
}

DeconvParams deconv_params_from_json(const Json& j, DeconvParams p) {
  overlay("deconv", j,
          {{"epsilon", set(p.epsilon)},
           {"nsr", set(p.nsr)},
           {"iterations", set(p.iterations)},
           {"tau", set(p.tau)},
           {"lambda", set(p.lambda)},
           {"step", set(p.step)},
           {"tv_eps", set(p.tv_eps)},
           {"rl_floor", set(p.rl_floor)}});
  return p;
}

Json to_json(const CorpusConfig& c) {
  return Json{{"count", c.count},
              {"sizes", c.sizes.str()},
              {"generator", c.generator},
              {"jitter", c.jitter},
              {"noise_sigma", c.noise_sigma},
              {"boundary", to_string(c.boundary)},
              {"img_size", c.img_size},
              {"source", to_string(c.source)},
              {"sharp_dir", c.sharp_dir.string()},
              {"seed", c.seed}};
}

CorpusConfig corpus_config_from_json(const Json& j, CorpusConfig c) {
  overlay("corpus", j,
          {{"count", set(c.count)},
           {"sizes", [&](const Json& v) { c.sizes = SizeRange::parse(v.get<std::string>()); }},
           {"generator", set(c.generator)},
           {"jitter", set(c.jitter)},
           {"noise_sigma", set(c.noise_sigma)},
           {"boundary", [&](const Json& v) { c.boundary = boundary_from_string(v.get<std::string>()); }},
           {"img_size", set(c.img_size)},
           {"source", [&](const Json& v) { c.source = sharp_source_from_string(v.get<std::string>()); }},
           {"sharp_dir", [&](const Json& v) { c.sharp_dir = v.get<std::string>(); }},
           {"seed", set_seed(c.seed)}});
  c.validate();
  return c;
}

Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace deblur
