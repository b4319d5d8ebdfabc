#pragma once

// Evaluation reports and single-image restoration.

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deblur_lab/checkpoint.hpp"
#include "deblur_lab/classical.hpp"
#include "deblur_lab/dataset.hpp"
#include "deblur_lab/metrics.hpp"

namespace deblur {

// Reference large-scale figures, carried in every report for comparison only.
inline constexpr double kReferencePsnrDb = 32.20;
inline constexpr double kReferenceSsim = 0.934;
inline constexpr double kReferenceParamsM = 2.83;

class Restorer {
 public:
  virtual ~Restorer() = default;
  virtual Image restore(const Image& blurred) const = 0;
  virtual std::size_t param_count() const { return 0; }
  virtual std::string name() const = 0;
};

// Returns the input unchanged.
class IdentityRestorer : public Restorer {
 public:
  Image restore(const Image& blurred) const override { return blurred; }
  std::string name() const override { return "identity"; }
};

class ModelRestorer : public Restorer {
 public:
  ModelRestorer(ModelConfig config, ModelParams params);
  explicit ModelRestorer(const Checkpoint& ckpt) : ModelRestorer(ckpt.config, ckpt.params) {}
  Image restore(const Image& blurred) const override;
  std::size_t param_count() const override { return params_.param_count(); }
  std::string name() const override { return "cnn_vit"; }
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  ModelParams params_;
};

struct EvalRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double input_psnr_db = 0.0;  // blurred vs sharp
  double input_ssim = 0.0;
  double inference_ms = 0.0;
};

struct EvalReport {
  std::string restorer;
  std::string split;
  std::vector<EvalRow> rows;
  StatSummary psnr;
  StatSummary ssim;
  double mean_input_psnr = 0.0;
  double mean_input_ssim = 0.0;
  double mean_inference_ms = 0.0;
  std::size_t param_count = 0;

  // Recomputes the aggregates from rows.
  void finalize();
  std::string to_json() const;
  std::string to_csv() const;
};

// Evaluates every pair of the given split (kUnassigned = all pairs). Rows keep
// dataset order regardless of jobs. Throws EmptyDatasetError for an empty split.
EvalReport evaluate(const PairedDataset& dataset, Split split, const Restorer& restorer, int jobs = 1);

// As above for a checkpointed model; the dataset size must match the model's.
EvalReport evaluate(const PairedDataset& dataset, Split split, const Checkpoint& ckpt, int jobs = 1);

struct DeblurSingleRequest {
  std::filesystem::path input;
  std::filesystem::path output;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> kernel;  // classical route
  DeconvMethod method = DeconvMethod::kWiener;
  DeconvParams params;
  // Classical route only: resize before restoring (the model uses its own size).
  std::optional<std::array<int, 2>> size;
  std::optional<std::filesystem::path> ground_truth;
};

struct DeblurSingleResult {
  Image output;
  std::optional<MetricResult> metrics;  // only with ground truth
};

// Exactly one of checkpoint / kernel must be given.
DeblurSingleResult deblur_single(const DeblurSingleRequest& request);

}  // namespace deblur
