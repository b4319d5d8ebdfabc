#include "deblur_lab/deblur_lab.h"

#include <cmath>
#include <cstring>
#include <new>
#include <string>

#include "deblur_lab/classical.hpp"
#include "deblur_lab/config.hpp"
#include "deblur_lab/corpus.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/evaluate.hpp"
#include "deblur_lab/gradcheck.hpp"
#include "deblur_lab/train.hpp"

struct dbl_kernel {
  deblur::BlurKernel k;
};

struct dbl_image {
  deblur::Image img;
};

using namespace deblur;

namespace {

thread_local std::string g_last_error;

class ArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename F>
dbl_status guarded(F&& body) {
  try {
    body();
    return DBL_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<dbl_status>(static_cast<int>(e.kind()));
  } catch (const ArgumentError& e) {
    g_last_error = e.what();
    return DBL_ERR_INVALID_ARGUMENT;
  } catch (const Json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return DBL_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DBL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DBL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DBL_ERR_INTERNAL;
  }
}

template <typename T>
T& need(T* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " is null");
  return *p;
}

std::string text(const char* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " is null");
  return p;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_json(char** out, const Json& j) { need(out, "output pointer") = dup_string(j.dump(2)); }

Json parse_request(const char* text) {
  if (!text) return Json::object();
  Json j = parse_json(text);
  if (!j.is_object()) throw ConfigError("request must be a JSON object");
  return j;
}

// Finite numbers as-is, anything else as null so the document stays valid JSON.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json to_json(const StatSummary& s) { return {{"min", num(s.min)}, {"mean", num(s.mean)}, {"max", num(s.max)}}; }

Json to_json(const SeverityStats& s) { return {{"count", s.count}, {"psnr_db", to_json(s.psnr)}, {"ssim", to_json(s.ssim)}}; }

Json to_json(const GradcheckOptions& o) {
  return {{"eps", o.eps},         {"op_tolerance", o.op_tolerance}, {"model_tolerance", o.model_tolerance},
          {"probes", o.probes},   {"include_model", o.include_model}, {"model_img", o.model_img},
          {"seed", o.seed}};
}

GradcheckOptions gradcheck_options_from_json(const Json& j) {
  GradcheckOptions o;
  for (const auto& [key, v] : j.items()) {
    if (key == "eps") o.eps = v.get<double>();
    else if (key == "op_tolerance") o.op_tolerance = v.get<double>();
    else if (key == "model_tolerance") o.model_tolerance = v.get<double>();
    else if (key == "probes") o.probes = v.get<std::size_t>();
    else if (key == "include_model") o.include_model = v.get<bool>();
    else if (key == "model_img") o.model_img = v.get<int>();
    else if (key == "seed") o.seed = v.get<std::uint64_t>();
    else throw ConfigError("gradcheck: unknown key '" + key + "'");
  }
  if (!(o.eps > 0.0) || o.probes == 0 || o.model_img < 8) throw ConfigError("gradcheck: invalid options");
  return o;
}

std::string str_field(const Json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw ConfigError(std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

std::array<int, 2> size_field(const Json& j, const char* key, std::array<int, 2> fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j[key];
  if (v.is_number_integer()) return {v.get<int>(), v.get<int>()};
  if (v.is_array() && v.size() == 2) return {v[0].get<int>(), v[1].get<int>()};
  throw ConfigError(std::string(key) + " must be an integer or [h, w]");
}

SplitSpec split_spec_from_json(const Json& j) {
  if (j.contains("counts")) {
    const auto c = j["counts"].get<std::vector<std::size_t>>();
    if (c.size() != 3) throw ConfigError("split counts need three values (train, val, test)");
    return SplitSpec::from_counts(c[0], c[1], c[2]);
  }
  if (j.contains("fractions")) {
    const auto f = j["fractions"].get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("split fractions need three values (train, val, test)");
    return SplitSpec::from_fractions(f[0], f[1], f[2]);
  }
  return {};
}

struct LoadedData {
  PairedDataset ds;
  int jobs = 1;
  std::uint64_t seed = 42;
};

// Shared dataset handling: ingest at img_size, then split when requested (or
// when always_split is set, with the default fractions).
LoadedData load_dataset(const Json& req, std::array<int, 2> img_size, bool always_split) {
  LoadedData out;
  out.jobs = req.value("jobs", 1);
  if (out.jobs < 1) throw ParameterError("jobs must be >= 1");
  out.seed = req.value("seed", std::uint64_t{42});
  out.ds = ingest(str_field(req, "blurred_dir"), str_field(req, "sharp_dir"), size_field(req, "img_size", img_size),
                  out.jobs);
  if (req.contains("split") && req["split"].is_object())
    split(out.ds, split_spec_from_json(req["split"]), out.seed);
  else if (always_split)
    split(out.ds, {}, out.seed);
  return out;
}

Json warnings_json(const PairedDataset& ds) {
  Json w = Json::array();
  for (const auto& x : ds.warnings) w.push_back({{"path", x.path.string()}, {"message", x.message}});
  return w;
}

Json split_counts(const PairedDataset& ds) {
  return {{"train", ds.count(Split::kTrain)},
          {"val", ds.count(Split::kVal)},
          {"test", ds.count(Split::kTest)},
          {"total", ds.pairs.size()}};
}

}  // namespace

extern "C" {

const char* dbl_version(void) { return "0.1.0"; }

const char* dbl_status_name(dbl_status status) {
  switch (status) {
    case DBL_OK: return "ok";
    case DBL_ERR_DIMENSION: return "dimension_error";
    case DBL_ERR_CONFIG: return "config_error";
    case DBL_ERR_PARAMETER: return "parameter_error";
    case DBL_ERR_STATE: return "state_error";
    case DBL_ERR_NUMERIC: return "numeric_error";
    case DBL_ERR_CONVERGENCE: return "convergence_error";
    case DBL_ERR_IO: return "io_error";
    case DBL_ERR_EMPTY_DATASET: return "empty_dataset_error";
    case DBL_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DBL_ERR_INTERNAL: return "internal_error";
  }
  return "unknown";
}

const char* dbl_last_error(void) { return g_last_error.c_str(); }

void dbl_string_free(char* s) { delete[] s; }

dbl_status dbl_default_config(const char* section, int img_size, char** json_out) {
  return guarded([&] {
    const std::string s = text(section, "section");
    Json j;
    if (s == "model") j = to_json(ModelConfig{});
    else if (s == "model_reduced") j = to_json(ModelConfig::reduced(img_size));
    else if (s == "train") j = to_json(TrainConfig{});
    else if (s == "loss") j = to_json(LossWeights{});
    else if (s == "corpus") j = to_json(CorpusConfig{});
    else if (s == "deconv") j = to_json(DeconvParams{});
    else if (s == "gradcheck") j = to_json(GradcheckOptions{});
    else throw ParameterError("unknown config section '" + s + "'");
    put_json(json_out, j);
  });
}

// ---- kernels ----

dbl_status dbl_kernel_linear(int size, double angle_degrees, double length_px, dbl_kernel** out) {
  return guarded([&] { need(out, "out") = new dbl_kernel{generate_linear_kernel(size, angle_degrees, length_px)}; });
}

dbl_status dbl_kernel_trajectory(int size, uint64_t seed, double jitter, dbl_kernel** out) {
  return guarded([&] { need(out, "out") = new dbl_kernel{generate_trajectory_kernel(size, seed, jitter)}; });
}

dbl_status dbl_kernel_from_values(int size, const double* values, int normalize, dbl_kernel** out) {
  return guarded([&] {
    need(values, "values");
    if (size < 1) throw ParameterError("kernel size must be positive");
    std::vector<double> v(values, values + static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
    need(out, "out") = new dbl_kernel{BlurKernel::from_values(size, std::move(v), normalize != 0)};
  });
}

dbl_status dbl_kernel_load(const char* path, dbl_kernel** out) {
  return guarded([&] { need(out, "out") = new dbl_kernel{load_kernel(text(path, "path"))}; });
}

dbl_status dbl_kernel_save(const dbl_kernel* k, const char* path) {
  return guarded([&] { save_kernel(need(k, "kernel").k, text(path, "path")); });
}

dbl_status dbl_kernel_size(const dbl_kernel* k, int* size) {
  return guarded([&] { need(size, "size") = need(k, "kernel").k.size; });
}

dbl_status dbl_kernel_values(const dbl_kernel* k, double* values, size_t count) {
  return guarded([&] {
    const auto& v = need(k, "kernel").k.values;
    need(values, "values");
    if (count < v.size()) throw ParameterError("buffer holds " + std::to_string(count) + " values, need " +
                                               std::to_string(v.size()));
    std::copy(v.begin(), v.end(), values);
  });
}

dbl_status dbl_kernel_describe(const dbl_kernel* k, size_t height, size_t width, char** json_out) {
  return guarded([&] {
    const BlurKernel& kern = need(k, "kernel").k;
    const SpectrumImage spec = kernel_spectrum(kern, height, width, false);
    double lo = INFINITY, hi = 0.0;
    for (double m : spec.magnitude) {
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    put_json(json_out, Json{{"size", kern.size},
                            {"sum", kern.sum()},
                            {"generator", to_string(kern.generator)},
                            {"angle_degrees", kern.angle_degrees},
                            {"length_px", kern.length_px},
                            {"seed", kern.seed},
                            {"spectrum", {{"height", height}, {"width", width}, {"dc", spec.dc()},
                                          {"min", lo}, {"max", hi}}}});
  });
}

dbl_status dbl_kernel_save_spectrum(const dbl_kernel* k, size_t height, size_t width, int log_scaled,
                                    const char* path) {
  return guarded([&] {
    save_spectrum_png(kernel_spectrum(need(k, "kernel").k, height, width, log_scaled != 0), text(path, "path"));
  });
}

void dbl_kernel_free(dbl_kernel* k) { delete k; }

// ---- images ----

dbl_status dbl_image_create(size_t height, size_t width, size_t channels, const double* data, dbl_image** out) {
  return guarded([&] {
    if (height == 0 || width == 0 || channels == 0) throw DimensionError("image dimensions must be positive");
    Image img(height, width, channels);
    if (data) std::copy(data, data + img.size(), img.data.begin());
    need(out, "out") = new dbl_image{std::move(img)};
  });
}

dbl_status dbl_image_load(const char* path, dbl_image** out) {
  return guarded([&] { need(out, "out") = new dbl_image{load_png(text(path, "path"))}; });
}

dbl_status dbl_image_save(const dbl_image* img, const char* path) {
  return guarded([&] { save_png(need(img, "image").img, text(path, "path")); });
}

dbl_status dbl_image_shape(const dbl_image* img, size_t* height, size_t* width, size_t* channels) {
  return guarded([&] {
    const Image& i = need(img, "image").img;
    if (height) *height = i.height;
    if (width) *width = i.width;
    if (channels) *channels = i.channels;
  });
}

dbl_status dbl_image_data(const dbl_image* img, const double** data) {
  return guarded([&] { need(data, "data") = need(img, "image").img.data.data(); });
}

dbl_status dbl_image_blur(const dbl_image* sharp, const dbl_kernel* k, double noise_sigma, const char* boundary,
                          uint64_t seed, dbl_image** out) {
  return guarded([&] {
    DegradationConfig d;
    d.kernel = need(k, "kernel").k;
    d.noise_sigma = noise_sigma;
    d.boundary = boundary ? boundary_from_string(boundary) : Boundary::kCircular;
    d.rng_seed = seed;
    need(out, "out") = new dbl_image{apply_blur(need(sharp, "image").img, d)};
  });
}

dbl_status dbl_image_deconvolve(const dbl_image* blurred, const dbl_kernel* k, const char* method,
                                const char* params_json, dbl_image** out) {
  return guarded([&] {
    DeconvRequest req;
    req.blurred = need(blurred, "image").img;
    req.kernel = need(k, "kernel").k;
    req.method = deconv_method_from_string(text(method, "method"));
    if (params_json) req.params = deconv_params_from_json(parse_json(params_json));
    need(out, "out") = new dbl_image{deconvolve(req)};
  });
}

dbl_status dbl_image_psnr(const dbl_image* a, const dbl_image* b, double* psnr_db) {
  return guarded([&] { need(psnr_db, "psnr_db") = psnr(need(a, "a").img, need(b, "b").img); });
}

dbl_status dbl_image_ssim(const dbl_image* a, const dbl_image* b, double* value) {
  return guarded([&] { need(value, "ssim") = ssim(need(a, "a").img, need(b, "b").img); });
}

void dbl_image_free(dbl_image* img) { delete img; }

// ---- pipeline ----

dbl_status dbl_corpus_build(const char* request_json, char** result_json) {
  return guarded([&] {
    const Json req = parse_request(request_json);
    const CorpusConfig cfg = corpus_config_from_json(req.value("corpus", Json::object()));
    const int jobs = req.value("jobs", 1);
    if (jobs < 1) throw ParameterError("jobs must be >= 1");
    const std::string out_dir = str_field(req, "out_dir");
    const auto entries = build_corpus(cfg, out_dir, jobs);
    Json pairs = Json::array();
    for (const auto& e : entries)
      pairs.push_back({{"id", e.id}, {"kernel_size", e.kernel_size}, {"generator", e.generator},
                       {"angle_degrees", e.angle_degrees}, {"length_px", e.length_px}, {"seed", e.seed},
                       {"source", e.source}});
    const auto ds = ingest(std::filesystem::path(out_dir) / "blurred", std::filesystem::path(out_dir) / "sharp",
                           cfg.img_size, jobs);
    put_json(result_json, Json{{"config", to_json(cfg)}, {"pairs", pairs}, {"stats", to_json(severity_stats(ds, jobs))}});
  });
}

dbl_status dbl_stats(const char* request_json, char** result_json) {
  return guarded([&] {
    const Json req = parse_request(request_json);
    const LoadedData d = load_dataset(req, {256, 256}, false);
    Json out{{"pairs", d.ds.pairs.size()},
             {"img_size", d.ds.img_size},
             {"overall", to_json(severity_stats(d.ds, d.jobs))},
             {"warnings", warnings_json(d.ds)}};
    if (req.contains("split")) {
      out["split_counts"] = split_counts(d.ds);
      for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
        if (d.ds.count(s) > 0) out["splits"][to_string(s)] = to_json(severity_stats(d.ds, s, d.jobs));
    }
    put_json(result_json, out);
  });
}

dbl_status dbl_train(const char* request_json, dbl_epoch_callback on_epoch, void* user, char** result_json) {
  return guarded([&] {
    need(result_json, "result_json");
    const Json req = parse_request(request_json);
    const ModelConfig mc = model_config_from_json(req.value("model", Json::object()));
    const TrainConfig tc = train_config_from_json(req.value("train", Json::object()));
    const LoadedData d = load_dataset(req, mc.img_size, true);
    const std::string out_dir = req.value("out_dir", std::string());
    TrainHooks hooks;
    if (on_epoch)
      hooks.on_epoch = [&](const HistoryRow& row) { on_epoch(history_row_json(row).c_str(), user); };
    const TrainResult r = train(d.ds, mc, tc, out_dir, hooks);
    Json out{{"epochs", r.history.size()},
             {"best_epoch", r.best_epoch},
             {"best_val_psnr", num(r.best_val_psnr)},
             {"stop_reason", r.stop_reason},
             {"param_count", r.best.params.param_count()},
             {"split_counts", split_counts(d.ds)},
             {"warnings", warnings_json(d.ds)}};
    if (!r.history.empty()) {
      out["final_train_loss"] = num(r.history.back().train_loss);
      out["final_lr"] = r.history.back().lr;
    }
    if (!out_dir.empty()) {
      const std::filesystem::path dir(out_dir);
      out["best_checkpoint"] = (dir / "best.dbck").string();
      out["last_checkpoint"] = (dir / "last.dbck").string();
      out["history"] = (dir / "history.jsonl").string();
    }
    put_json(result_json, out);
  });
}

dbl_status dbl_eval(const char* request_json, char** report_json) {
  return guarded([&] {
    need(report_json, "report_json");
    const Json req = parse_request(request_json);
    const std::string which = req.value("checkpoint", std::string("identity"));
    const Split s = split_from_string(req.value("eval_split", std::string("test")));
    EvalReport report;
    if (which == "identity") {
      const LoadedData d = load_dataset(req, {256, 256}, true);
      report = evaluate(d.ds, s, IdentityRestorer{}, d.jobs);
    } else {
      const Checkpoint ck = load_checkpoint(which);
      const LoadedData d = load_dataset(req, ck.config.img_size, true);
      report = evaluate(d.ds, s, ck, d.jobs);
    }
    if (req.contains("csv_path")) write_text_file(str_field(req, "csv_path"), report.to_csv());
    *report_json = dup_string(report.to_json());
  });
}

dbl_status dbl_deblur(const char* request_json, char** result_json) {
  return guarded([&] {
    const Json req = parse_request(request_json);
    DeblurSingleRequest r;
    r.input = str_field(req, "input");
    r.output = str_field(req, "output");
    if (req.contains("checkpoint")) r.checkpoint = str_field(req, "checkpoint");
    if (req.contains("kernel")) r.kernel = str_field(req, "kernel");
    if (req.contains("method")) r.method = deconv_method_from_string(str_field(req, "method"));
    if (req.contains("params")) r.params = deconv_params_from_json(req["params"]);
    if (req.contains("size")) r.size = size_field(req, "size", {0, 0});
    if (req.contains("ground_truth")) r.ground_truth = str_field(req, "ground_truth");
    const DeblurSingleResult res = deblur_single(r);
    Json out{{"output", r.output.string()},
             {"height", res.output.height},
             {"width", res.output.width},
             {"route", r.checkpoint ? "checkpoint" : to_string(r.method)}};
    if (res.metrics)
      out["metrics"] = {{"psnr_db", num(res.metrics->psnr_db)}, {"ssim", num(res.metrics->ssim)},
                        {"mse", num(res.metrics->mse)}, {"mae", num(res.metrics->mae)}};
    put_json(result_json, out);
  });
}

dbl_status dbl_gradcheck(const char* options_json, char** report_json) {
  return guarded([&] {
    need(report_json, "report_json");
    const GradcheckOptions o = gradcheck_options_from_json(parse_request(options_json));
    const GradcheckReport rep = run_gradcheck_suite(o);
    Json cases = Json::array();
    for (const auto& c : rep.results)
      cases.push_back({{"name", c.name}, {"group", c.group}, {"max_rel_error", num(c.max_rel_error)},
                       {"probes", c.probes}, {"tolerance", c.tolerance}, {"passed", c.passed}});
    put_json(report_json, Json{{"options", to_json(o)},
                               {"passed", rep.passed()},
                               {"max_op_error", num(rep.max_op_error)},
                               {"max_model_error", num(rep.max_model_error)},
                               {"seconds", rep.seconds},
                               {"cases", cases}});
  });
}

}  // extern "C"
