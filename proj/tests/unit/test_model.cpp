#include <cmath>

#include "doctest.h"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/model.hpp"
#include "deblur_lab/rng.hpp"
#include "deblur_lab/synth.hpp"

using namespace deblur;

TEST_CASE("token counts") {
  ModelConfig c;
  CHECK(count_receptive_tokens(c) == 64);
  c.patch_px = 64;
  CHECK(count_receptive_tokens(c) == 16);
  c.patch_px = 256;
  CHECK(count_receptive_tokens(c) == 1);
}

TEST_CASE("default model size and output") {
  const ModelConfig c;
  const ModelParams p = build_model(c);
  MESSAGE("default param_count " << p.param_count());
  CHECK(p.param_count() >= 2'000'000);
  CHECK(p.param_count() <= 3'700'000);
  const Image out = infer(p, c, render_scene_image(256, 256, 1));
  CHECK(out.height == 256);
  CHECK(out.width == 256);
  CHECK(out.channels == 3);
  for (double v : out.data) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("initialization is seeded; smaller configs are smaller") {
  const ModelConfig c = ModelConfig::reduced(32);
  const ModelParams a = build_model(c), b = build_model(c);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.entries()[i].first == b.entries()[i].first);
    CHECK(std::equal(a.entries()[i].second.values().begin(), a.entries()[i].second.values().end(),
                     b.entries()[i].second.values().begin()));
  }
  ModelConfig half;
  for (auto& ch : half.encoder_channels) ch /= 2;
  for (auto& ch : half.decoder_channels) ch /= 2;
  half.token_channels /= 2;
  CHECK(build_model(half).param_count() < build_model(ModelConfig{}).param_count());
}

TEST_CASE("forward behaviour") {
  const ModelConfig c = ModelConfig::reduced(32);
  ModelParams p = build_model(c);
  const Image x = render_text_image(32, 32, 3);

  SUBCASE("infer twice is bit-identical; train equals infer without dropout") {
    const Image a = infer(p, c, x), b = infer(p, c, x);
    CHECK(a.data == b.data);
    const Tensor t = forward(p, c, to_tensor(x), {ForwardMode::kTrain, 17});
    CHECK(std::equal(a.data.begin(), a.data.end(), t.values().begin()));
  }
  SUBCASE("dropout only acts in train mode") {
    ModelConfig d = c;
    d.dropout = 0.3;
    const Image a = infer(p, d, x);
    const Tensor t = forward(p, d, to_tensor(x), {ForwardMode::kTrain, 17});
    CHECK_FALSE(std::equal(a.data.begin(), a.data.end(), t.values().begin()));
  }
  SUBCASE("zero final conv gives sigmoid(bias) everywhere") {
    for (auto& v : p.at("out_conv.w").mutable_values()) v = 0.0;
    for (auto& v : p.at("out_conv.b").mutable_values()) v = 0.0;
    const Image out = infer(p, c, Image(32, 32, 3, 0.0));
    for (double v : out.data) CHECK(v == 0.5);
  }
  SUBCASE("wrong input size names the stage") {
    try {
      forward(p, c, Tensor::zeros({16, 16, 3}));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("input") != std::string::npos);
    }
  }
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.patch_px = 24;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.skip_sources = {"enc_conv1", "enc_conv3"};  // resolutions swapped
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.decoder_strides = {2, 2, 2};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  for (int img : {32, 64, 128}) CHECK_NOTHROW(ModelConfig::reduced(img).validate());
}
