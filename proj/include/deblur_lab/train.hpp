#pragma once

// The training loop: for each epoch, for each training pair (batch size 1):
// forward, composite loss, backward, Adam step; then validation PSNR,
// best-checkpoint saving, LR reduction on plateau and early stopping.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deblur_lab/checkpoint.hpp"
#include "deblur_lab/dataset.hpp"
#include "deblur_lab/loss.hpp"
#include "deblur_lab/model.hpp"

namespace deblur {

struct TrainConfig {
  int epochs_max = 100;
  int batch_size = 1;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-7;
  int early_stop_patience = 10;
  int lr_plateau_patience = 5;
  double lr_plateau_factor = 0.5;
  double min_lr = 1e-6;
  double epoch_time_budget_s = 300.0;
  LossWeights loss_weights;
  std::uint64_t seed = 42;
  bool log_batches = false;

  void validate() const;
};

struct HistoryRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_psnr = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  std::size_t samples = 0;        // training pairs processed this epoch
  bool budget_exhausted = false;  // epoch cut short by the time budget
};

struct TrainHooks {
  // Replaces the computed validation PSNR (callback-contract testing).
  std::function<double(int epoch, double computed)> val_metric_override;
  std::function<void(const HistoryRow&)> on_epoch;
  // Seconds since an arbitrary origin; defaults to a steady clock.
  std::function<double()> clock;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  Checkpoint best;  // parameters as stored (float32-rounded)
  Checkpoint last;  // state after the final epoch, same rounding
  int best_epoch = 0;
  double best_val_psnr = 0.0;
  std::string stop_reason;  // "epochs_max", "early_stop"
};

// out_dir receives best.dbck, last.dbck and history.jsonl (plus diagnostic files when the
// loss goes non-finite, which raises NumericError). An empty out_dir keeps
// everything in memory.
TrainResult train(const PairedDataset& dataset, const ModelConfig& model_config, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const TrainHooks& hooks = {});

std::string history_row_json(const HistoryRow& row);

}  // namespace deblur
