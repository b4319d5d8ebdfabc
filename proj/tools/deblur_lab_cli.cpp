// deblur-lab: command-line front end over the C API.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "deblur_lab/deblur_lab.h"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{kExitUsage, msg}; }

void check(dbl_status st) {
  if (st != DBL_OK) throw Failure{kExitRuntime, std::string(dbl_status_name(st)) + ": " + dbl_last_error()};
}

// Takes ownership of a string returned by the library.
Json take_json(char* s) {
  Json j = Json::parse(s);
  dbl_string_free(s);
  return j;
}

Json defaults(const char* section, int img = 0) {
  char* out = nullptr;
  check(dbl_default_config(section, img, &out));
  return take_json(out);
}

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "out";
  bool verbose = false;
  int jobs = 1;
  Json file = Json::object();  // parsed --config
};

// Defaults, then the config-file section, then explicit flags.
Json section(const Globals& g, const char* name, Json base) {
  if (g.file.contains(name)) {
    if (!g.file[name].is_object()) usage_error(std::string("config section '") + name + "' must be an object");
    base.merge_patch(g.file[name]);
  }
  return base;
}

void write_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw Failure{kExitRuntime, "io_error: cannot write " + path.string()};
}

void write_resolved(const Globals& g, const std::string& command, const Json& resolved) {
  Json doc{{"command", command}, {"jobs", g.jobs}};
  if (g.seed) doc["seed"] = *g.seed;
  if (!g.config_path.empty()) doc["config_file"] = g.config_path;
  for (const auto& [k, v] : resolved.items()) doc[k] = v;
  write_file(fs::path(g.out_dir) / "resolved_config.json", doc.dump(2) + "\n");
}

// Shared dataset flags.
struct DataFlags {
  std::string blurred_dir, sharp_dir;
  std::vector<double> fractions;
  std::vector<std::size_t> counts;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--blurred-dir", d.blurred_dir, "Directory of blurred PNGs")->required();
  cmd->add_option("--sharp-dir", d.sharp_dir, "Directory of sharp PNGs (paired by file stem)")->required();
  auto* fr = cmd->add_option("--fractions", d.fractions, "Split fractions train,val,test")
                 ->delimiter(',')
                 ->default_str("0.7,0.1,0.2")
                 ->expected(3);
  cmd->add_option("--counts", d.counts, "Split counts train,val,test (remainder unassigned)")
      ->delimiter(',')
      ->default_str("off")
      ->expected(3)
      ->excludes(fr);
}

Json split_json(const Globals& g, const DataFlags& d) {
  if (!d.counts.empty()) return {{"counts", d.counts}};
  if (!d.fractions.empty()) return {{"fractions", d.fractions}};
  if (g.file.contains("split")) return g.file["split"];
  return {{"fractions", {0.7, 0.1, 0.2}}};
}

Json data_request(const Globals& g, const DataFlags& d, std::uint64_t split_seed) {
  return {{"blurred_dir", d.blurred_dir}, {"sharp_dir", d.sharp_dir}, {"jobs", g.jobs},
          {"seed", split_seed},           {"split", split_json(g, d)}};
}

void print_summary(const char* label, const Json& s) {
  auto v = [](const Json& x) { return x.is_null() ? std::string("nan") : (std::ostringstream() << x.get<double>()).str(); };
  std::printf("%-8s n=%-5s PSNR min %s mean %s max %s | SSIM min %s mean %s max %s\n", label,
              s["count"].dump().c_str(), v(s["psnr_db"]["min"]).c_str(), v(s["psnr_db"]["mean"]).c_str(),
              v(s["psnr_db"]["max"]).c_str(), v(s["ssim"]["min"]).c_str(), v(s["ssim"]["mean"]).c_str(),
              v(s["ssim"]["max"]).c_str());
}

// ---- kernel ----

struct KernelGenFlags {
  std::string type = "trajectory";
  int size = 13;
  double angle = 0.0;
  double length = 0.0;
  double jitter = 1.0;
  int count = 1;
  std::string name = "kernel";
  int spectrum = 64;
  bool log_scale = false;
};

int run_kernel_gen(const Globals& g, const KernelGenFlags& f) {
  if (f.type != "linear" && f.type != "trajectory") usage_error("--type must be linear or trajectory");
  if (f.count < 1) usage_error("--count must be >= 1");
  const std::uint64_t seed = g.seed.value_or(42);
  const double length = f.length > 0.0 ? f.length : f.size;
  write_resolved(g, "kernel gen",
                 {{"kernel", {{"type", f.type}, {"size", f.size}, {"angle", f.angle}, {"length", length},
                              {"jitter", f.jitter}, {"count", f.count}, {"seed", seed},
                              {"spectrum", f.spectrum}, {"log", f.log_scale}}}});
  for (int i = 0; i < f.count; ++i) {
    const std::string stem = f.count == 1 ? f.name : f.name + "_" + std::to_string(i);
    dbl_kernel* k = nullptr;
    if (f.type == "linear")
      check(dbl_kernel_linear(f.size, f.angle, length, &k));
    else
      check(dbl_kernel_trajectory(f.size, seed + static_cast<std::uint64_t>(i), f.jitter, &k));
    const fs::path psf = fs::path(g.out_dir) / (stem + ".psf");
    const fs::path png = fs::path(g.out_dir) / (stem + "_spectrum.png");
    dbl_status st = dbl_kernel_save(k, psf.string().c_str());
    if (st == DBL_OK) st = dbl_kernel_save_spectrum(k, f.spectrum, f.spectrum, f.log_scale, png.string().c_str());
    char* info = nullptr;
    if (st == DBL_OK) st = dbl_kernel_describe(k, f.spectrum, f.spectrum, &info);
    dbl_kernel_free(k);
    check(st);
    const Json j = take_json(info);
    std::printf("%s  size %d  sum %.12f  spectrum min %.3g\n", psf.string().c_str(), j["size"].get<int>(),
                j["sum"].get<double>(), j["spectrum"]["min"].get<double>());
  }
  return 0;
}

int run_kernel_inspect(const Globals& g, const std::vector<std::string>& files, int spectrum, bool log_scale) {
  write_resolved(g, "kernel inspect", {{"kernel", {{"files", files}, {"spectrum", spectrum}, {"log", log_scale}}}});
  Json all = Json::array();
  for (const auto& file : files) {
    dbl_kernel* k = nullptr;
    check(dbl_kernel_load(file.c_str(), &k));
    const fs::path png = fs::path(g.out_dir) / (fs::path(file).stem().string() + "_spectrum.png");
    char* info = nullptr;
    dbl_status st = dbl_kernel_describe(k, spectrum, spectrum, &info);
    if (st == DBL_OK) st = dbl_kernel_save_spectrum(k, spectrum, spectrum, log_scale, png.string().c_str());
    dbl_kernel_free(k);
    if (info && st != DBL_OK) dbl_string_free(info);
    check(st);
    Json j = take_json(info);
    j["file"] = file;
    j["spectrum_png"] = png.string();
    std::printf("%s\n", j.dump(2).c_str());
    all.push_back(j);
  }
  write_file(fs::path(g.out_dir) / "kernels.json", all.dump(2) + "\n");
  return 0;
}

// ---- blur ----

struct BlurFlags {
  std::string sharp_dir;
  std::optional<int> n;
  std::optional<std::string> sizes, generator, source, boundary;
  std::optional<double> jitter, noise;
  std::optional<int> img_size;
};

int run_blur(const Globals& g, const BlurFlags& f) {
  Json c = section(g, "corpus", defaults("corpus"));
  if (!f.sharp_dir.empty()) {
    c["source"] = "directory";
    c["sharp_dir"] = f.sharp_dir;
  }
  if (f.source) c["source"] = *f.source;
  if (f.n) c["count"] = *f.n;
  if (f.sizes) c["sizes"] = *f.sizes;
  if (f.generator) c["generator"] = *f.generator;
  if (f.boundary) c["boundary"] = *f.boundary;
  if (f.jitter) c["jitter"] = *f.jitter;
  if (f.noise) c["noise_sigma"] = *f.noise;
  if (f.img_size) c["img_size"] = {*f.img_size, *f.img_size};
  if (g.seed) c["seed"] = *g.seed;
  write_resolved(g, "blur", {{"corpus", c}});
  char* out = nullptr;
  check(dbl_corpus_build(Json{{"corpus", c}, {"out_dir", g.out_dir}, {"jobs", g.jobs}}.dump().c_str(), &out));
  const Json r = take_json(out);
  write_file(fs::path(g.out_dir) / "stats.json", r["stats"].dump(2) + "\n");
  std::printf("wrote %zu pairs to %s\n", r["pairs"].size(), g.out_dir.c_str());
  print_summary("corpus", r["stats"]);
  return 0;
}

// ---- stats ----

int run_stats(const Globals& g, const DataFlags& d, int img) {
  Json req = data_request(g, d, g.seed.value_or(42));
  req["img_size"] = {img, img};
  write_resolved(g, "stats", {{"data", req}});
  char* out = nullptr;
  check(dbl_stats(req.dump().c_str(), &out));
  const Json r = take_json(out);
  write_file(fs::path(g.out_dir) / "stats.json", r.dump(2) + "\n");
  for (const auto& w : r["warnings"]) std::fprintf(stderr, "warning: %s: %s\n", w["path"].get<std::string>().c_str(),
                                                   w["message"].get<std::string>().c_str());
  std::printf("Blurred vs sharp (%zu pairs at %dx%d)\n", r["pairs"].get<std::size_t>(), img, img);
  print_summary("all", r["overall"]);
  if (r.contains("splits"))
    for (const auto& [name, s] : r["splits"].items()) print_summary(name.c_str(), s);
  return 0;
}

// ---- train ----

struct TrainFlags {
  DataFlags data;
  std::optional<int> epochs, patience, reduced;
  std::optional<double> lr, budget;
  bool log_batches = false;
};

void print_epoch(const char* row, void* user) {
  if (!*static_cast<bool*>(user)) return;
  const Json r = Json::parse(row);
  std::printf("epoch %3d  loss %.5f  val %.3f dB  lr %.3g  %.1fs%s\n", r["epoch"].get<int>(),
              r["train_loss"].is_null() ? NAN : r["train_loss"].get<double>(),
              r["val_psnr"].is_null() ? NAN : r["val_psnr"].get<double>(), r["lr"].get<double>(),
              r["seconds"].get<double>(), r["budget_exhausted"].get<bool>() ? "  (budget)" : "");
  std::fflush(stdout);
}

int run_train(const Globals& g, const TrainFlags& f) {
  Json model = section(g, "model", f.reduced ? defaults("model_reduced", *f.reduced) : defaults("model"));
  Json tc = section(g, "train", defaults("train"));
  if (f.epochs) tc["epochs_max"] = *f.epochs;
  if (f.lr) tc["lr"] = *f.lr;
  if (f.patience) tc["early_stop_patience"] = *f.patience;
  if (f.budget) tc["epoch_time_budget_s"] = *f.budget;
  if (f.log_batches) tc["log_batches"] = true;
  if (g.seed) {
    tc["seed"] = *g.seed;
    model["seed"] = *g.seed;
  }
  Json req = data_request(g, f.data, tc["seed"].get<std::uint64_t>());
  req["model"] = model;
  req["train"] = tc;
  req["out_dir"] = g.out_dir;
  write_resolved(g, "train", {{"data", data_request(g, f.data, tc["seed"].get<std::uint64_t>())},
                              {"model", model}, {"train", tc}});
  bool verbose = g.verbose;
  char* out = nullptr;
  check(dbl_train(req.dump().c_str(), print_epoch, &verbose, &out));
  const Json r = take_json(out);
  write_file(fs::path(g.out_dir) / "train_summary.json", r.dump(2) + "\n");
  std::printf("stopped: %s after %d epochs; best val %.3f dB at epoch %d; %zu params\n",
              r["stop_reason"].get<std::string>().c_str(), r["epochs"].get<int>(),
              r["best_val_psnr"].is_null() ? NAN : r["best_val_psnr"].get<double>(), r["best_epoch"].get<int>(),
              r["param_count"].get<std::size_t>());
  return 0;
}

// ---- eval ----

int run_eval(const Globals& g, const DataFlags& d, const std::string& checkpoint, const std::string& split, int img) {
  Json req = data_request(g, d, g.seed.value_or(42));
  if (g.file.contains("train") && g.file["train"].contains("seed") && !g.seed)
    req["seed"] = g.file["train"]["seed"];
  req["checkpoint"] = checkpoint;
  req["eval_split"] = split;
  if (checkpoint == "identity") req["img_size"] = {img, img};
  req["csv_path"] = (fs::path(g.out_dir) / "eval.csv").string();
  write_resolved(g, "eval", {{"eval", req}});
  char* out = nullptr;
  check(dbl_eval(req.dump().c_str(), &out));
  const Json r = take_json(out);
  write_file(fs::path(g.out_dir) / "eval_report.json", r.dump(2) + "\n");
  const Json& agg = r["aggregates"];
  std::printf("%s on %s (%zu images): PSNR %.3f dB (input %.3f)  SSIM %.4f (input %.4f)\n",
              r["restorer"].get<std::string>().c_str(), split.c_str(), r["per_image"].size(),
              agg["mean_psnr"].get<double>(), agg["mean_input_psnr"].get<double>(), agg["mean_ssim"].get<double>(),
              agg["mean_input_ssim"].get<double>());
  return 0;
}

// ---- deblur ----

struct DeblurFlags {
  std::string input, output = "deblurred.png", checkpoint, kernel, method = "wiener", ground_truth;
  std::optional<double> nsr, epsilon, tau, lambda;
  std::optional<int> iterations, size;
};

int run_deblur(const Globals& g, const DeblurFlags& f) {
  if (f.checkpoint.empty() == f.kernel.empty()) usage_error("give exactly one of --checkpoint or --kernel");
  if (fs::path(f.output).has_parent_path()) usage_error("--output is a file name inside --out");
  Json params = section(g, "deconv", defaults("deconv"));
  if (f.nsr) params["nsr"] = *f.nsr;
  if (f.epsilon) params["epsilon"] = *f.epsilon;
  if (f.tau) params["tau"] = *f.tau;
  if (f.lambda) params["lambda"] = *f.lambda;
  if (f.iterations) params["iterations"] = *f.iterations;
  Json req{{"input", f.input}, {"output", (fs::path(g.out_dir) / f.output).string()}};
  if (!f.checkpoint.empty()) {
    req["checkpoint"] = f.checkpoint;
  } else {
    req["kernel"] = f.kernel;
    req["method"] = f.method;
    req["params"] = params;
    if (f.size) req["size"] = *f.size;
  }
  if (!f.ground_truth.empty()) req["ground_truth"] = f.ground_truth;
  write_resolved(g, "deblur", {{"deblur", req}});
  char* out = nullptr;
  check(dbl_deblur(req.dump().c_str(), &out));
  const Json r = take_json(out);
  std::printf("wrote %s (%dx%d) via %s\n", r["output"].get<std::string>().c_str(), r["height"].get<int>(),
              r["width"].get<int>(), r["route"].get<std::string>().c_str());
  if (r.contains("metrics")) {
    std::printf("vs ground truth: PSNR %.3f dB  SSIM %.4f\n", r["metrics"]["psnr_db"].get<double>(),
                r["metrics"]["ssim"].get<double>());
    write_file(fs::path(g.out_dir) / "metrics.json", r["metrics"].dump(2) + "\n");
  }
  return 0;
}

// ---- gradcheck ----

int run_gradcheck(const Globals& g, std::optional<int> probes, bool no_model, std::optional<int> model_img) {
  Json o = section(g, "gradcheck", defaults("gradcheck"));
  if (probes) o["probes"] = *probes;
  if (no_model) o["include_model"] = false;
  if (model_img) o["model_img"] = *model_img;
  if (g.seed) o["seed"] = *g.seed;
  write_resolved(g, "gradcheck", {{"gradcheck", o}});
  char* out = nullptr;
  check(dbl_gradcheck(o.dump().c_str(), &out));
  const Json r = take_json(out);
  write_file(fs::path(g.out_dir) / "gradcheck.json", r.dump(2) + "\n");
  for (const auto& c : r["cases"])
    if (g.verbose || !c["passed"].get<bool>())
      std::printf("%-5s %-40s %.3e (tol %.0e)\n", c["passed"].get<bool>() ? "ok" : "FAIL",
                  c["name"].get<std::string>().c_str(), c["max_rel_error"].is_null() ? NAN : c["max_rel_error"].get<double>(),
                  c["tolerance"].get<double>());
  std::printf("%zu cases; max relative error ops %.3e, model %.3e; %.1fs\n", r["cases"].size(),
              r["max_op_error"].get<double>(), r["max_model_error"].get<double>(), r["seconds"].get<double>());
  const bool ok = r["passed"].get<bool>();
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : kExitRuntime;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("DEBLUR_LAB_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 0);
  if (errno || *end || *s == '-') usage_error(std::string("DEBLUR_LAB_SEED is not an unsigned integer: ") + s);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-deblurring lab: kernels, corpora, classical deconvolution and a CNN-ViT restorer"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", std::string(dbl_version()));

  Globals g;
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "Seed for every random stream (env DEBLUR_LAB_SEED as fallback)")
      ->default_str("42");
  app.add_option("--config", g.config_path, "JSON file with sections model/train/corpus/deconv/gradcheck/split")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.out_dir, "Output directory; nothing is written elsewhere");
  app.add_flag("--verbose,-v", g.verbose, "Per-epoch / per-case progress");
  app.add_option("--jobs,-j", g.jobs, "Worker threads for decoding, synthesis and scoring")->check(CLI::PositiveNumber);

  auto* kernel = app.add_subcommand("kernel", "Generate or inspect blur kernels");
  kernel->require_subcommand(1);
  KernelGenFlags kg;
  auto* kgen = kernel->add_subcommand("gen", "Write PSF files and their spectrum images");
  kgen->add_option("--type", kg.type, "linear | trajectory")->check(CLI::IsMember({"linear", "trajectory"}));
  kgen->add_option("--size", kg.size, "Odd kernel size in [3, 63]");
  kgen->add_option("--angle", kg.angle, "Linear: streak angle in degrees");
  kgen->add_option("--length", kg.length, "Linear: streak length in pixels (0 = size)");
  kgen->add_option("--jitter", kg.jitter, "Trajectory: angular noise scale");
  kgen->add_option("--count", kg.count, "Number of kernels (trajectory seeds seed, seed+1, ...)");
  kgen->add_option("--name", kg.name, "File stem");
  kgen->add_option("--spectrum-size", kg.spectrum, "Spectrum image side");
  kgen->add_flag("--log", kg.log_scale, "Log-scale spectrum magnitude");
  std::vector<std::string> inspect_files;
  int inspect_spectrum = 64;
  bool inspect_log = false;
  auto* kinspect = kernel->add_subcommand("inspect", "Describe PSF files and write spectrum images");
  kinspect->add_option("files", inspect_files, "PSF files")->required()->check(CLI::ExistingFile);
  kinspect->add_option("--spectrum-size", inspect_spectrum, "Spectrum image side");
  kinspect->add_flag("--log", inspect_log, "Log-scale spectrum magnitude");

  BlurFlags bf;
  auto* blur = app.add_subcommand("blur", "Synthesize a paired corpus with size-stepped kernels");
  blur->add_option("--sharp-dir", bf.sharp_dir, "Sharp source PNGs (default: synthetic scenes)");
  blur->add_option("--source", bf.source, "scene | text | directory")->default_str("scene");
  blur->add_option("--n", bf.n, "Number of pairs")->default_str("100");
  blur->add_option("--sizes", bf.sizes, "Kernel sizes start:stop:step")->default_str("13:31:2");
  blur->add_option("--generator", bf.generator, "trajectory | linear | mixed")->default_str("trajectory");
  blur->add_option("--jitter", bf.jitter, "Trajectory angular noise")->default_str("1");
  blur->add_option("--noise", bf.noise, "Gaussian noise sigma")->default_str("0");
  blur->add_option("--boundary", bf.boundary, "circular | reflect")->default_str("circular");
  blur->add_option("--img-size", bf.img_size, "Square output size")->default_str("256");

  DataFlags sf;
  int stats_img = 256;
  auto* stats = app.add_subcommand("stats", "Blurred-vs-sharp PSNR/SSIM summary");
  add_data_flags(stats, sf);
  stats->add_option("--img-size", stats_img, "Square size images are resized to");

  TrainFlags tf;
  auto* trn = app.add_subcommand("train", "Train the CNN-ViT restorer");
  add_data_flags(trn, tf.data);
  trn->add_option("--epochs", tf.epochs, "Maximum epochs")->default_str("100");
  trn->add_option("--lr", tf.lr, "Adam learning rate")->default_str("1e-4");
  trn->add_option("--patience", tf.patience, "Early-stopping patience in epochs")->default_str("10");
  trn->add_option("--budget", tf.budget, "Per-epoch time budget in seconds")->default_str("300");
  trn->add_option("--reduced", tf.reduced, "Use the reduced model at this square size")->default_str("off");
  trn->add_flag("--log-batches", tf.log_batches, "Also write batches.jsonl");

  DataFlags ef;
  std::string eval_ckpt = "identity", eval_split = "test";
  int eval_img = 256;
  auto* evl = app.add_subcommand("eval", "Score a checkpoint (or the identity baseline) on a split");
  add_data_flags(evl, ef);
  evl->add_option("--checkpoint", eval_ckpt, "Checkpoint file, or 'identity'");
  evl->add_option("--split", eval_split, "train | val | test | all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  evl->add_option("--img-size", eval_img, "Square size for the identity baseline");

  DeblurFlags df;
  auto* dbl = app.add_subcommand("deblur", "Restore one image with a checkpoint or a known kernel");
  dbl->add_option("--input", df.input, "Blurred PNG")->required()->check(CLI::ExistingFile);
  dbl->add_option("--output", df.output, "Output file name inside --out");
  dbl->add_option("--checkpoint", df.checkpoint, "Model checkpoint");
  dbl->add_option("--kernel", df.kernel, "PSF file for classical deconvolution");
  dbl->add_option("--method", df.method, "inverse | wiener | richardson_lucy | landweber | tv")
      ->check(CLI::IsMember({"inverse", "wiener", "richardson_lucy", "landweber", "tv"}));
  dbl->add_option("--nsr", df.nsr, "Wiener noise-to-signal ratio")->default_str("0.01");
  dbl->add_option("--epsilon", df.epsilon, "Inverse-filter regularizer")->default_str("0.001");
  dbl->add_option("--iterations", df.iterations, "Iterative methods")->default_str("50");
  dbl->add_option("--tau", df.tau, "Landweber step")->default_str("1");
  dbl->add_option("--lambda", df.lambda, "TV weight")->default_str("0.01");
  dbl->add_option("--size", df.size, "Classical route: resize to this square size first")->default_str("off");
  dbl->add_option("--ground-truth", df.ground_truth, "Sharp PNG to score against");

  std::optional<int> gc_probes, gc_img;
  bool gc_no_model = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and the model");
  gc->add_option("--probes", gc_probes, "Entries probed per input / layer family")->default_str("5");
  gc->add_option("--model-img", gc_img, "Side of the reduced model used end to end")->default_str("32");
  gc->add_flag("--no-model", gc_no_model, "Skip the end-to-end model check");

  for (auto* sub : app.get_subcommands({})) {
    sub->footer("Global flags (--seed, --config, --out, --verbose, --jobs) are listed by deblur-lab --help.");
    for (auto* leaf : sub->get_subcommands({})) leaf->footer(sub->get_footer());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    // Usage for the innermost subcommand that was reached.
    const CLI::App* where = &app;
    for (auto subs = where->get_subcommands(); !subs.empty(); subs = where->get_subcommands()) where = subs.front();
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), where->help().c_str());
    return kExitUsage;
  }

  try {
    g.seed = seed_flag ? seed_flag : env_seed();
    if (!g.config_path.empty()) {
      std::ifstream in(g.config_path);
      try {
        g.file = Json::parse(in);
      } catch (const Json::exception& e) {
        usage_error("cannot parse " + g.config_path + ": " + e.what());
      }
      if (!g.file.is_object()) usage_error("config file must hold a JSON object");
      for (const auto& [k, v] : g.file.items())
        if (k != "model" && k != "train" && k != "corpus" && k != "deconv" && k != "gradcheck" && k != "split")
          usage_error("unknown config section '" + k + "'");
    }
    std::error_code ec;
    fs::create_directories(g.out_dir, ec);
    if (ec) throw Failure{kExitRuntime, "io_error: cannot create " + g.out_dir + ": " + ec.message()};

    if (*kgen) return run_kernel_gen(g, kg);
    if (*kinspect) return run_kernel_inspect(g, inspect_files, inspect_spectrum, inspect_log);
    if (*blur) return run_blur(g, bf);
    if (*stats) return run_stats(g, sf, stats_img);
    if (*trn) return run_train(g, tf);
    if (*evl) return run_eval(g, ef, eval_ckpt, eval_split, eval_img);
    if (*dbl) return run_deblur(g, df);
    if (*gc) return run_gradcheck(g, gc_probes, gc_no_model, gc_img);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    if (f.code == kExitUsage) std::fprintf(stderr, "run with --help for usage\n");
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
