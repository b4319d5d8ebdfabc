#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "deblur_lab/config.hpp"
#include "deblur_lab/corpus.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/evaluate.hpp"
#include "deblur_lab/synth.hpp"
#include "deblur_lab/train.hpp"

using namespace deblur;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("deblur_lab_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_pairs(const fs::path& root, int n, std::size_t size = 32) {
  for (int i = 0; i < n; ++i) {
    const Image s = render_scene_image(size, size, static_cast<std::uint64_t>(i));
    DegradationConfig d;
    d.kernel = generate_linear_kernel(7, 30.0 * i, 5.0);
    save_png(s, root / "sharp" / ("img" + std::to_string(i) + ".png"));
    save_png(apply_blur(s, d), root / "blurred" / ("img" + std::to_string(i) + ".png"));
  }
}

// In-memory dataset of text pairs with a fixed kernel.
PairedDataset toy_dataset(int n_train, int n_val, std::size_t size, std::uint64_t seed = 3) {
  PairedDataset ds;
  ds.img_size = {static_cast<int>(size), static_cast<int>(size)};
  for (int i = 0; i < n_train + n_val; ++i) {
    ImagePair p;
    p.id = "p" + std::to_string(i);
    p.sharp = render_text_image(size, size, seed + static_cast<std::uint64_t>(i));
    DegradationConfig d;
    d.kernel = generate_trajectory_kernel(7, seed + static_cast<std::uint64_t>(i), 1.0);
    p.blurred = apply_blur(p.sharp, d);
    p.split = i < n_train ? Split::kTrain : Split::kVal;
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

TrainConfig quick_train_config(int epochs) {
  TrainConfig tc;
  tc.epochs_max = epochs;
  tc.lr = 1e-3;
  return tc;
}

}  // namespace

TEST_CASE("ingest") {
  TempDir tmp("ingest");
  write_pairs(tmp.path, 6);

  SUBCASE("matching stems pair up") {
    const auto ds = ingest(tmp.path / "blurred", tmp.path / "sharp", {24, 20});
    CHECK(ds.pairs.size() == 6);
    CHECK(ds.warnings.empty());
    for (const auto& p : ds.pairs) {
      CHECK(p.blurred.height == 24);
      CHECK(p.sharp.width == 20);
      for (double v : p.blurred.data) CHECK((v >= 0.0 && v <= 1.0));
      CHECK(p.blurred_path.stem() == p.sharp_path.stem());
    }
  }
  SUBCASE("orphans are reported and excluded") {
    fs::remove(tmp.path / "blurred" / "img3.png");
    const auto ds = ingest(tmp.path / "blurred", tmp.path / "sharp", {32, 32});
    CHECK(ds.pairs.size() == 5);
    REQUIRE(ds.warnings.size() == 1);
    CHECK(ds.warnings[0].path.filename() == "img3.png");
  }
  SUBCASE("undecodable file names its path") {
    std::ofstream(tmp.path / "blurred" / "img2.png") << "not a png";
    try {
      ingest(tmp.path / "blurred", tmp.path / "sharp", {32, 32});
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("img2.png") != std::string::npos);
    }
  }
  SUBCASE("empty and missing directories") {
    fs::create_directories(tmp.path / "none_a");
    fs::create_directories(tmp.path / "none_b");
    CHECK_THROWS_AS(ingest(tmp.path / "none_a", tmp.path / "none_b", {32, 32}), EmptyDatasetError);
    CHECK_THROWS_AS(ingest(tmp.path / "missing", tmp.path / "sharp", {32, 32}), IoError);
  }
  SUBCASE("parallel decode gives the same dataset") {
    const auto a = ingest(tmp.path / "blurred", tmp.path / "sharp", {32, 32}, 1);
    const auto b = ingest(tmp.path / "blurred", tmp.path / "sharp", {32, 32}, 3);
    for (std::size_t i = 0; i < a.pairs.size(); ++i) CHECK(a.pairs[i].blurred.data == b.pairs[i].blurred.data);
  }
}

TEST_CASE("split") {
  PairedDataset ds = toy_dataset(10, 0, 16);
  SUBCASE("fractions by largest remainder") {
    split(ds, SplitSpec::from_fractions(0.7, 0.2, 0.1), 1);
    CHECK(ds.count(Split::kTrain) == 7);
    CHECK(ds.count(Split::kVal) == 2);
    CHECK(ds.count(Split::kTest) == 1);
    split(ds, SplitSpec::from_fractions(0.5, 0.25, 0.25), 1);  // 5 / 2.5 / 2.5
    CHECK(ds.count(Split::kTrain) + ds.count(Split::kVal) + ds.count(Split::kTest) == 10);
  }
  SUBCASE("deterministic by seed, disjoint and complete") {
    PairedDataset other = toy_dataset(10, 0, 16);
    split(ds, {}, 99);
    split(other, {}, 99);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
      CHECK(ds.pairs[i].split == other.pairs[i].split);
      CHECK(ds.pairs[i].split != Split::kUnassigned);
      seen.insert(ds.pairs[i].id);
    }
    CHECK(seen.size() == 10);
    split(other, {}, 100);
    bool differs = false;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) differs |= ds.pairs[i].split != other.pairs[i].split;
    CHECK(differs);
  }
  SUBCASE("counts") {
    split(ds, SplitSpec::from_counts(5, 2, 2), 3);
    CHECK(ds.count(Split::kTrain) == 5);
    CHECK(ds.count(Split::kUnassigned) == 10);
    std::size_t unassigned = 0;
    for (const auto& p : ds.pairs) unassigned += p.split == Split::kUnassigned;
    CHECK(unassigned == 1);
    CHECK_THROWS_AS(split(ds, SplitSpec::from_counts(8, 2, 1), 3), ParameterError);
    CHECK_THROWS_AS(split(ds, SplitSpec::from_fractions(0.7, 0.2, 0.2), 3), ParameterError);
  }
}

TEST_CASE("severity statistics") {
  PairedDataset ds = toy_dataset(4, 0, 24);
  const auto s = severity_stats(ds);
  CHECK(s.count == 4);
  CHECK(s.psnr.min <= s.psnr.mean);
  CHECK(s.ssim.min <= s.ssim.mean);
  CHECK(s.psnr.mean <= s.psnr.max);
  for (auto& p : ds.pairs) p.blurred = p.sharp;
  const auto same = severity_stats(ds);
  CHECK(same.psnr.mean == kPsnrCapDb);
  CHECK(same.ssim.mean == 1.0);
  CHECK_THROWS_AS(severity_stats(PairedDataset{}), EmptyDatasetError);
}

TEST_CASE("corpus synthesis") {
  SUBCASE("kernel sizes step across the run") {
    CorpusConfig c;
    c.count = 100;
    for (int i = 0; i < 100; ++i) CHECK(kernel_size_for(c, i) == 13 + 2 * (i / 10));
    c.count = 25;
    CHECK(kernel_size_for(c, 0) == 13);
    CHECK(kernel_size_for(c, 3) == 15);
    CHECK(kernel_size_for(c, 24) == 29);
    CHECK(SizeRange::parse("13:31:2").sizes().size() == 10);
    CHECK_THROWS_AS(SizeRange::parse("13-31"), ParameterError);
    CHECK_THROWS_AS(SizeRange::parse("12:30:2"), ParameterError);
  }
  SUBCASE("files, manifest and determinism across worker counts") {
    TempDir a("corpus_a"), b("corpus_b");
    CorpusConfig c;
    c.count = 6;
    c.sizes = SizeRange::parse("5:9:2");
    c.img_size = {32, 32};
    c.seed = 11;
    const auto ea = build_corpus(c, a.path, 1);
    build_corpus(c, b.path, 3);
    REQUIRE(ea.size() == 6);
    CHECK(ea[0].kernel_size == 5);
    CHECK(ea[5].kernel_size == 9);
    for (const char* sub : {"blurred", "sharp", "kernels"})
      for (const auto& e : ea) {
        const auto name = e.id + (std::string(sub) == "kernels" ? ".psf" : ".png");
        CHECK(read_bytes(a.path / sub / name) == read_bytes(b.path / sub / name));
      }
    const Json manifest = read_json_file(a.path / "manifest.json");
    CHECK(manifest["pairs"].size() == 6);
    CHECK(manifest["config"]["sizes"] == "5:9:2");
    const auto ds = ingest(a.path / "blurred", a.path / "sharp", {32, 32});
    CHECK(ds.pairs.size() == 6);
    CHECK(load_kernel(a.path / "kernels" / "00004.psf").size == 9);
  }
  SUBCASE("sharp images from a directory") {
    TempDir src("corpus_src"), out("corpus_out");
    save_png(render_scene_image(40, 40, 1), src.path / "a.png");
    save_png(render_scene_image(40, 40, 2), src.path / "b.png");
    CorpusConfig c;
    c.count = 3;
    c.sizes = SizeRange::parse("5:5:2");
    c.img_size = {32, 32};
    c.source = SharpSource::kDirectory;
    c.sharp_dir = src.path;
    const auto e = build_corpus(c, out.path);
    CHECK(e[0].source == "a.png");
    CHECK(e[2].source == "a.png");
  }
}

TEST_CASE("config json") {
  const TrainConfig tc = train_config_from_json(parse_json(R"({"lr": 0.002, "loss_weights": {"gamma": 0}})"));
  CHECK(tc.lr == 0.002);
  CHECK(tc.loss_weights.gamma == 0.0);
  CHECK(tc.loss_weights.alpha == 1.0);
  CHECK_THROWS_AS(train_config_from_json(parse_json(R"({"learning_rate": 1})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(parse_json(R"({"batch_size": 4})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(parse_json(R"({"lr": "fast"})")), ConfigError);
  CHECK_THROWS_AS(parse_json("{"), ConfigError);

  const ModelConfig mc = ModelConfig::reduced(64);
  const ModelConfig back = model_config_from_json(to_json(mc));
  CHECK(to_json(back) == to_json(mc));
  CorpusConfig cc;
  cc.seed = 0xFFFFFFFFFFFFFFFFull;
  CHECK(corpus_config_from_json(to_json(cc)).seed == cc.seed);
  CHECK(deconv_params_from_json(to_json(DeconvParams{})).nsr == DeconvParams{}.nsr);
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp("ckpt");
  Checkpoint ckpt;
  ckpt.config = ModelConfig::reduced(32);
  ckpt.params = build_model(ckpt.config);
  ckpt.epoch = 7;
  ckpt.best_val_psnr = 21.5;
  {
    std::vector<Tensor> t = ckpt.params.tensors();
    for (auto& x : t) x.grad_buffer().assign(x.numel(), 0.01);
    adam_step(t, ckpt.optimizer, {});
  }
  save_checkpoint(ckpt, tmp.path / "a.dbck");
  const Checkpoint loaded = load_checkpoint(tmp.path / "a.dbck");
  CHECK(loaded.epoch == 7);
  CHECK(loaded.best_val_psnr == 21.5);
  CHECK(loaded.optimizer.step == 1);
  save_checkpoint(loaded, tmp.path / "b.dbck");
  CHECK(read_bytes(tmp.path / "a.dbck") == read_bytes(tmp.path / "b.dbck"));
  const auto bytes = read_bytes(tmp.path / "a.dbck");
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DBCK");

  SUBCASE("quantized parameters survive exactly") {
    ModelParams q = build_model(ckpt.config);
    quantize_to_storage(q);
    Checkpoint c2{ckpt.config, q, {}, 1.0, 1};
    const Checkpoint l2 = deserialize_checkpoint(serialize_checkpoint(c2));
    for (std::size_t i = 0; i < q.size(); ++i)
      CHECK(std::equal(q.entries()[i].second.values().begin(), q.entries()[i].second.values().end(),
                       l2.params.entries()[i].second.values().begin()));
  }
  SUBCASE("corruption is detected") {
    auto raw = serialize_checkpoint(ckpt);
    auto bad = raw;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), IoError);
    bad = raw;
    bad[4] = 9;
    CHECK_THROWS_AS(deserialize_checkpoint(bad), IoError);
    bad = raw;
    bad.resize(bad.size() - 4);
    CHECK_THROWS_AS(deserialize_checkpoint(bad), IoError);
    CHECK_THROWS_AS(load_checkpoint(tmp.path / "missing.dbck"), IoError);
  }
  SUBCASE("every expected parameter must be present") {
    Checkpoint partial;
    partial.config = ckpt.config;
    for (const auto& [name, t] : ckpt.params.entries())
      if (name != "out_conv.b") partial.params.add(name, t);
    CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(partial)), IoError);
  }
}

TEST_CASE("training loop contracts") {
  const ModelConfig mc = ModelConfig::reduced(32);

  SUBCASE("early stopping on a constant validation metric") {
    TrainConfig tc = quick_train_config(20);
    tc.early_stop_patience = 3;
    TrainHooks hooks;
    hooks.val_metric_override = [](int, double) { return 20.0; };
    const auto r = train(toy_dataset(2, 1, 32), mc, tc, "", hooks);
    CHECK(r.stop_reason == "early_stop");
    CHECK(r.history.size() <= 1 + 3);
    CHECK(r.best_epoch == 1);
  }
  SUBCASE("history rows are ordered and lr never increases; plateau halves lr") {
    TrainConfig tc = quick_train_config(8);
    tc.lr_plateau_patience = 2;
    tc.early_stop_patience = 100;
    TrainHooks hooks;
    hooks.val_metric_override = [](int epoch, double) { return epoch == 1 ? 30.0 : 10.0; };
    TempDir tmp("train_hist");
    const auto r = train(toy_dataset(2, 1, 32), mc, tc, tmp.path, hooks);
    REQUIRE(r.history.size() == 8);
    for (std::size_t i = 1; i < r.history.size(); ++i) {
      CHECK(r.history[i].epoch == r.history[i - 1].epoch + 1);
      CHECK(r.history[i].lr <= r.history[i - 1].lr);
    }
    CHECK(r.history[3].lr == doctest::Approx(5e-4));
    CHECK(r.history[7].lr == doctest::Approx(1.25e-4));
    std::ifstream log(tmp.path / "history.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      CHECK(parse_json(line)["epoch"] == ++lines);
    }
    CHECK(lines == 8);
    CHECK(fs::exists(tmp.path / "best.dbck"));
    CHECK(load_checkpoint(tmp.path / "best.dbck").epoch == 1);
  }
  SUBCASE("fixed seeds reproduce the history") {
    const auto ds = toy_dataset(3, 1, 32);
    TrainConfig tc = quick_train_config(3);
    const auto a = train(ds, mc, tc, "");
    const auto b = train(ds, mc, tc, "");
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_loss == b.history[i].train_loss);
      CHECK(a.history[i].val_psnr == b.history[i].val_psnr);
      CHECK(a.history[i].lr == b.history[i].lr);
    }
    tc.seed = 43;
    CHECK(train(ds, mc, tc, "").history[0].train_loss != a.history[0].train_loss);
  }
  SUBCASE("time budget cuts an epoch after the sample that crosses it") {
    double now = 0.0;
    TrainHooks hooks;
    hooks.clock = [&now] { return now += 1.0; };  // every reading advances one second
    TrainConfig tc = quick_train_config(1);
    tc.epoch_time_budget_s = 2.5;
    const auto r = train(toy_dataset(6, 1, 32), mc, tc, "", hooks);
    CHECK(r.history[0].budget_exhausted);
    CHECK(r.history[0].samples < 6);
    CHECK(r.history[0].samples >= 1);
  }
  SUBCASE("non-finite loss aborts with a snapshot") {
    auto ds = toy_dataset(2, 1, 32);
    ds.pairs[0].sharp.data[5] = NAN;
    ds.pairs[1].sharp.data[5] = NAN;
    TempDir tmp("train_nan");
    CHECK_THROWS_AS(train(ds, mc, quick_train_config(2), tmp.path), NumericError);
    CHECK(fs::exists(tmp.path / "diagnostic.json"));
    CHECK(fs::exists(tmp.path / "diagnostic.dbck"));
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(train(toy_dataset(2, 0, 32), mc, quick_train_config(1), ""), EmptyDatasetError);
    CHECK_THROWS_AS(train(toy_dataset(2, 1, 64), mc, quick_train_config(1), ""), ConfigError);
  }
}

TEST_CASE("evaluation") {
  auto ds = toy_dataset(3, 2, 32);
  SUBCASE("identity on sharp inputs scores SSIM 1") {
    auto same = ds;
    for (auto& p : same.pairs) p.blurred = p.sharp;
    const auto r = evaluate(same, Split::kUnassigned, IdentityRestorer{});
    CHECK(r.ssim.mean == 1.0);
    CHECK(r.psnr.mean == kPsnrCapDb);
  }
  SUBCASE("aggregates recompute exactly from rows") {
    const auto r = evaluate(ds, Split::kTrain, IdentityRestorer{});
    REQUIRE(r.rows.size() == 3);
    double sum = 0, mn = INFINITY;
    for (const auto& row : r.rows) {
      sum += row.psnr_db;
      mn = std::min(mn, row.psnr_db);
      CHECK(row.psnr_db == row.input_psnr_db);
    }
    CHECK(r.psnr.mean == sum / 3);
    CHECK(r.psnr.min == mn);
    EvalReport copy = r;
    copy.finalize();
    CHECK(copy.psnr.mean == r.psnr.mean);
    const Json j = parse_json(r.to_json());
    CHECK(j["reference"]["psnr_db"] == 32.20);
    CHECK(j["reference"]["ssim"] == 0.934);
    CHECK(j["per_image"].size() == 3);
    CHECK(r.to_csv().find("id,psnr_db,ssim") == 0);
  }
  SUBCASE("checkpoint evaluation, determinism and size checks") {
    Checkpoint ck{ModelConfig::reduced(32), build_model(ModelConfig::reduced(32)), {}, 0.0, 0};
    quantize_to_storage(ck.params);
    const auto a = evaluate(ds, Split::kVal, ck, 1);
    const auto b = evaluate(ds, Split::kVal, ck, 2);
    for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].psnr_db == b.rows[i].psnr_db);
    CHECK(a.param_count == ck.params.param_count());
    const Checkpoint reloaded = deserialize_checkpoint(serialize_checkpoint(ck));
    CHECK(evaluate(ds, Split::kVal, reloaded).psnr.mean == a.psnr.mean);
    CHECK_THROWS_AS(evaluate(toy_dataset(1, 1, 64), Split::kVal, ck), ConfigError);
    CHECK_THROWS_AS(evaluate(ds, Split::kTest, ck), EmptyDatasetError);
  }
}

TEST_CASE("single-image deblurring") {
  TempDir tmp("single");
  const Image img = render_scene_image(40, 48, 5);
  save_png(img, tmp.path / "in.png");
  save_kernel(BlurKernel::delta(3), tmp.path / "delta.psf");

  SUBCASE("identity kernel returns the input") {
    DeblurSingleRequest req;
    req.input = tmp.path / "in.png";
    req.output = tmp.path / "out.png";
    req.kernel = tmp.path / "delta.psf";
    req.method = DeconvMethod::kInverse;
    req.params.epsilon = 0.0;
    const auto r = deblur_single(req);
    CHECK_FALSE(r.metrics.has_value());
    CHECK(read_bytes(tmp.path / "out.png") == read_bytes(tmp.path / "in.png"));
    req.ground_truth = tmp.path / "in.png";
    CHECK(deblur_single(req).metrics->psnr_db == kPsnrCapDb);
  }
  SUBCASE("checkpoint route resizes and is repeatable") {
    Checkpoint ck{ModelConfig::reduced(32), build_model(ModelConfig::reduced(32)), {}, 0.0, 0};
    save_checkpoint(ck, tmp.path / "m.dbck");
    DeblurSingleRequest req;
    req.input = tmp.path / "in.png";
    req.checkpoint = tmp.path / "m.dbck";
    req.output = tmp.path / "a.png";
    const auto r = deblur_single(req);
    CHECK(r.output.height == 32);
    CHECK(r.output.width == 32);
    for (double v : r.output.data) CHECK((v >= 0.0 && v <= 1.0));
    req.output = tmp.path / "b.png";
    deblur_single(req);
    CHECK(read_bytes(tmp.path / "a.png") == read_bytes(tmp.path / "b.png"));
  }
  SUBCASE("missing inputs") {
    DeblurSingleRequest req;
    req.input = tmp.path / "in.png";
    req.output = tmp.path / "x.png";
    CHECK_THROWS_AS(deblur_single(req), ParameterError);
    req.checkpoint = tmp.path / "nope.dbck";
    CHECK_THROWS_AS(deblur_single(req), IoError);
    req.checkpoint.reset();
    req.kernel = tmp.path / "nope.psf";
    CHECK_THROWS_AS(deblur_single(req), IoError);
  }
}
