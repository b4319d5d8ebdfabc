#include "deblur_lab/evaluate.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "deblur_lab/config.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/parallel.hpp"

namespace deblur {

ModelRestorer::ModelRestorer(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

Image ModelRestorer::restore(const Image& blurred) const { return infer(params_, config_, blurred); }

void EvalReport::finalize() {
  const double inf = std::numeric_limits<double>::infinity();
  psnr = {inf, 0.0, -inf};
  ssim = {inf, 0.0, -inf};
  mean_input_psnr = mean_input_ssim = mean_inference_ms = 0.0;
  if (rows.empty()) return;
  for (const auto& r : rows) {
    psnr.min = std::min(psnr.min, r.psnr_db);
    psnr.max = std::max(psnr.max, r.psnr_db);
    psnr.mean += r.psnr_db;
    ssim.min = std::min(ssim.min, r.ssim);
    ssim.max = std::max(ssim.max, r.ssim);
    ssim.mean += r.ssim;
    mean_input_psnr += r.input_psnr_db;
    mean_input_ssim += r.input_ssim;
    mean_inference_ms += r.inference_ms;
  }
  const double n = static_cast<double>(rows.size());
  psnr.mean /= n;
  ssim.mean /= n;
  mean_input_psnr /= n;
  mean_input_ssim /= n;
  mean_inference_ms /= n;
}

std::string EvalReport::to_json() const {
  Json per_image = Json::array();
  for (const auto& r : rows)
    per_image.push_back({{"id", r.id},
                         {"psnr_db", r.psnr_db},
                         {"ssim", r.ssim},
                         {"input_psnr_db", r.input_psnr_db},
                         {"input_ssim", r.input_ssim},
                         {"inference_ms", r.inference_ms}});
  const Json j{
      {"restorer", restorer},
      {"split", split},
      {"count", rows.size()},
      {"aggregates",
       {{"mean_psnr", psnr.mean},
        {"mean_ssim", ssim.mean},
        {"min_psnr", psnr.min},
        {"max_psnr", psnr.max},
        {"min_ssim", ssim.min},
        {"max_ssim", ssim.max},
        {"mean_input_psnr", mean_input_psnr},
        {"mean_input_ssim", mean_input_ssim}}},
      {"timing", {{"mean_inference_ms", mean_inference_ms}}},
      {"param_count", param_count},
      {"reference", {{"psnr_db", kReferencePsnrDb}, {"ssim", kReferenceSsim}, {"params_m", kReferenceParamsM},
                     {"note", "reference full-scale GPU training result; not reproduced here"}}},
      {"per_image", per_image}};
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "id,psnr_db,ssim,input_psnr_db,input_ssim,inference_ms\n";
  for (const auto& r : rows)
    os << r.id << ',' << r.psnr_db << ',' << r.ssim << ',' << r.input_psnr_db << ',' << r.input_ssim << ','
       << r.inference_ms << '\n';
  return os.str();
}

EvalReport evaluate(const PairedDataset& dataset, Split split, const Restorer& restorer, int jobs) {
  const auto pairs = dataset.subset(split);
  if (pairs.empty()) throw EmptyDatasetError(std::string("split '") + to_string(split) + "' is empty");
  EvalReport report;
  report.restorer = restorer.name();
  report.split = to_string(split);
  report.param_count = restorer.param_count();
  report.rows.resize(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    const ImagePair& p = *pairs[i];
    const auto t0 = std::chrono::steady_clock::now();
    const Image out = restorer.restore(p.blurred);
    const auto t1 = std::chrono::steady_clock::now();
    EvalRow& r = report.rows[i];
    r.id = p.id;
    r.psnr_db = deblur::psnr(out, p.sharp);
    r.ssim = deblur::ssim(out, p.sharp);
    r.input_psnr_db = deblur::psnr(p.blurred, p.sharp);
    r.input_ssim = deblur::ssim(p.blurred, p.sharp);
    r.inference_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  });
  report.finalize();
  return report;
}

EvalReport evaluate(const PairedDataset& dataset, Split split, const Checkpoint& ckpt, int jobs) {
  if (dataset.img_size != ckpt.config.img_size)
    throw ConfigError("dataset images are " + std::to_string(dataset.img_size[0]) + "x" +
                      std::to_string(dataset.img_size[1]) + " but the checkpoint expects " +
                      std::to_string(ckpt.config.img_size[0]) + "x" + std::to_string(ckpt.config.img_size[1]));
  return evaluate(dataset, split, ModelRestorer(ckpt), jobs);
}

DeblurSingleResult deblur_single(const DeblurSingleRequest& req) {
  if (req.checkpoint.has_value() == req.kernel.has_value())
    throw ParameterError("deblur needs exactly one of a checkpoint or a kernel");
  Image input = load_png(req.input);
  auto resize_to = [](const Image& img, std::array<int, 2> size) {
    const auto h = static_cast<std::size_t>(size[0]), w = static_cast<std::size_t>(size[1]);
    return img.height == h && img.width == w ? img : clamp_unit(resize_bilinear(img, h, w));
  };

  DeblurSingleResult result;
  if (req.checkpoint) {
    const Checkpoint ckpt = load_checkpoint(*req.checkpoint);
    input = resize_to(input, ckpt.config.img_size);
    result.output = ModelRestorer(ckpt).restore(input);
  } else {
    if (req.size) input = resize_to(input, *req.size);
    DeconvRequest d;
    d.blurred = input;
    d.kernel = load_kernel(*req.kernel);
    d.method = req.method;
    d.params = req.params;
    result.output = deconvolve(d);
  }
  if (req.ground_truth) {
    const Image gt = resize_to(load_png(*req.ground_truth),
                               {static_cast<int>(result.output.height), static_cast<int>(result.output.width)});
    result.metrics = compare_images(result.output, gt);
  }
  if (!req.output.empty()) save_png(result.output, req.output);
  return result;
}

}  // namespace deblur
