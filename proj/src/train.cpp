#include "deblur_lab/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "deblur_lab/adam.hpp"
#include "deblur_lab/config.hpp"
#include "deblur_lab/errors.hpp"
#include "deblur_lab/metrics.hpp"
#include "deblur_lab/rng.hpp"

namespace deblur {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (batch_size != 1) fail("batch_size must be 1 (the network trains on single pairs)");
  if (epochs_max <= 0) fail("epochs_max must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (early_stop_patience <= 0) fail("early_stop_patience must be positive");
  if (lr_plateau_patience <= 0) fail("lr_plateau_patience must be positive");
  if (!(lr_plateau_factor > 0.0 && lr_plateau_factor < 1.0)) fail("lr_plateau_factor must be in (0, 1)");
  if (!(min_lr >= 0.0) || min_lr > lr) fail("min_lr must be in [0, lr]");
  if (!(epoch_time_budget_s > 0.0)) fail("epoch_time_budget_s must be positive");
  loss_weights.validate();
}

std::string history_row_json(const HistoryRow& row) {
  return Json{{"epoch", row.epoch},
              {"train_loss", row.train_loss},
              {"val_psnr", row.val_psnr},
              {"lr", row.lr},
              {"seconds", row.seconds},
              {"samples", row.samples},
              {"budget_exhausted", row.budget_exhausted}}
      .dump();
}

namespace {

ModelParams clone_params(const ModelParams& params) {
  ModelParams out;
  for (const auto& [name, t] : params.entries())
    out.add(name, Tensor::from_values(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true));
  return out;
}

class LineLog {
 public:
  explicit LineLog(const fs::path& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path.string());
  }
  void write(const std::string& line) {
    if (!out_.is_open()) return;
    out_ << line << '\n';
    out_.flush();
    if (!out_) throw IoError("failed writing training log");
  }

 private:
  std::ofstream out_;
};

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

TrainResult train(const PairedDataset& dataset, const ModelConfig& model_config, const TrainConfig& config,
                  const fs::path& out_dir, const TrainHooks& hooks) {
  config.validate();
  model_config.validate();
  if (dataset.img_size != model_config.img_size)
    throw ConfigError("dataset size " + std::to_string(dataset.img_size[0]) + "x" + std::to_string(dataset.img_size[1]) +
                      " does not match the model's img_size");
  const auto train_pairs = dataset.subset(Split::kTrain);
  const auto val_pairs = dataset.subset(Split::kVal);
  if (train_pairs.empty()) throw EmptyDatasetError("training split is empty");
  if (val_pairs.empty()) throw EmptyDatasetError("validation split is empty");

  const auto clock = hooks.clock ? hooks.clock : steady_seconds;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  LineLog history_log(out_dir.empty() ? fs::path() : out_dir / "history.jsonl");
  LineLog batch_log(out_dir.empty() || !config.log_batches ? fs::path() : out_dir / "batches.jsonl");

  ModelParams params = build_model(model_config);
  std::vector<Tensor> tensors = params.tensors();
  AdamState adam;
  AdamHyper hyper{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  const PerceptualExtractor extractor;

  std::vector<Tensor> inputs;
  for (const auto* p : train_pairs) inputs.push_back(to_tensor(p->blurred));

  TrainResult result;
  result.best_val_psnr = -INFINITY;
  int stale = 0, plateau = 0;
  std::uint64_t step = 0;
  result.stop_reason = "epochs_max";

  for (int epoch = 1; epoch <= config.epochs_max; ++epoch) {
    const double t0 = clock();
    std::vector<std::size_t> order(train_pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

    HistoryRow row;
    row.epoch = epoch;
    row.lr = hyper.lr;
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const ImagePair& pair = *train_pairs[order[k]];
      ForwardOptions fo{ForwardMode::kTrain, derive_seed(config.seed ^ 0xD80Full, step)};
      const Tensor pred = forward(params, model_config, inputs[order[k]], fo);
      LossBreakdown br;
      const Tensor loss = composite_loss(pred, pair.sharp, config.loss_weights, extractor, &br);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ", pair " + pair.id;
        if (!out_dir.empty()) {
          write_text_file(out_dir / "diagnostic.json",
                          Json{{"epoch", epoch},
                               {"step", step},
                               {"pair", pair.id},
                               {"loss", std::isnan(value) ? "nan" : "inf"},
                               {"terms", {{"mae", br.mae}, {"mse", br.mse}, {"perceptual", br.perceptual}, {"ssim", br.ssim_loss}}},
                               {"lr", hyper.lr}}
                                  .dump(2) +
                              "\n");
          Checkpoint snap{model_config, clone_params(params), adam, result.best_val_psnr, epoch};
          save_checkpoint(snap, out_dir / "diagnostic.dbck");
          where += "; snapshot written to " + (out_dir / "diagnostic.dbck").string();
        }
        throw NumericError("non-finite training loss at " + where);
      }
      for (auto& t : tensors) t.zero_grad();
      backward(loss);
      adam_step(tensors, adam, hyper);
      ++step;
      loss_sum += value;
      ++row.samples;
      if (config.log_batches)
        batch_log.write(Json{{"epoch", epoch}, {"step", step}, {"pair", pair.id}, {"loss", value}}.dump());
      if (k + 1 < order.size() && clock() - t0 >= config.epoch_time_budget_s) {
        row.budget_exhausted = true;
        break;
      }
    }
    row.train_loss = loss_sum / static_cast<double>(row.samples);

    double val = 0.0;
    for (const auto* p : val_pairs) val += psnr(infer(params, model_config, p->blurred), p->sharp);
    val /= static_cast<double>(val_pairs.size());
    if (hooks.val_metric_override) val = hooks.val_metric_override(epoch, val);
    row.val_psnr = val;

    if (val > result.best_val_psnr) {
      result.best_val_psnr = val;
      result.best_epoch = epoch;
      stale = plateau = 0;
      result.best = Checkpoint{model_config, clone_params(params), adam, val, epoch};
      quantize_to_storage(result.best.params);
      if (!out_dir.empty()) save_checkpoint(result.best, out_dir / "best.dbck");
    } else {
      ++stale;
      if (++plateau >= config.lr_plateau_patience) {
        hyper.lr = std::max(hyper.lr * config.lr_plateau_factor, config.min_lr);
        plateau = 0;
      }
    }
    row.seconds = clock() - t0;
    result.history.push_back(row);
    history_log.write(history_row_json(row));
    if (hooks.on_epoch) hooks.on_epoch(row);
    if (stale >= config.early_stop_patience) {
      result.stop_reason = "early_stop";
      break;
    }
  }
  const int last_epoch = result.history.empty() ? 0 : result.history.back().epoch;
  result.last = Checkpoint{model_config, clone_params(params), adam, result.best_val_psnr, last_epoch};
  quantize_to_storage(result.last.params);
  if (!out_dir.empty()) save_checkpoint(result.last, out_dir / "last.dbck");
  return result;
}

}  // namespace deblur
