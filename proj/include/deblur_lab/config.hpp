#pragma once

// JSON mirrors of the configuration structs. Field names match the struct
// members; missing fields keep their defaults, unknown fields are rejected.

#include "json.hpp"

#include "deblur_lab/classical.hpp"
#include "deblur_lab/corpus.hpp"
#include "deblur_lab/loss.hpp"
#include "deblur_lab/model.hpp"
#include "deblur_lab/train.hpp"

namespace deblur {

using Json = nlohmann::json;

Json to_json(const ModelConfig& c);
Json to_json(const LossWeights& w);
Json to_json(const TrainConfig& c);
Json to_json(const DeconvParams& p);
Json to_json(const CorpusConfig& c);

// Each overlays the JSON object onto `base` and validates the result.
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});
LossWeights loss_weights_from_json(const Json& j, LossWeights base = {});
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
DeconvParams deconv_params_from_json(const Json& j, DeconvParams base = {});
CorpusConfig corpus_config_from_json(const Json& j, CorpusConfig base = {});

// Parses text, mapping syntax errors to ConfigError.
Json parse_json(const std::string& text);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace deblur
