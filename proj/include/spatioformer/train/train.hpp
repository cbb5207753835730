#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/data/samples.hpp"
#include "spatioformer/data/split.hpp"
#include "spatioformer/model/forward.hpp"
#include "spatioformer/numerics/optim.hpp"
#include "spatioformer/train/metrics.hpp"

namespace spatioformer::train {

struct TrainConfig {
  model::ModelConfig model;
  std::size_t epochs = 200;    // upper bound; early stopping usually ends sooner
  std::size_t patience = 20;   // validation-stagnant epochs before stopping
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_fraction = 0.05;
  double min_lr = 0.0;
  std::uint64_t seed = 0;
  bool normalize_targets = true;
  data::TileGrid grid;

  void validate() const {
    model.validate();
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw ConfigError("train: lr must be positive and weight_decay non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("train: warmup_fraction must lie in [0,1)");
    if (!(min_lr >= 0.0 && min_lr <= lr)) throw ConfigError("train: need 0 <= min_lr <= lr");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, model, epochs, patience, batch_size, lr, weight_decay, beta1, beta2, adam_eps,
                                                warmup_fraction, min_lr, seed, normalize_targets, grid)

struct EpochLog {
  std::size_t epoch = 0;  // 0 = before any update
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  model::ModelParams params;  // best-on-validation
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  bool aborted = false;
  std::string abort_reason;
};

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_loss,lr\n";
  for (const auto& e : log) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," + format_double(e.lr) + "\n";
  }
  return out;
}

inline double dataset_mse(const model::ModelParams& p, const model::ModelConfig& cfg, const data::Dataset& d) {
  if (d.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto pred = model::predict(p, cfg, d.chips);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - d.samples[i].richness) * (pred[i] - d.samples[i].richness);
  return s / static_cast<double>(pred.size());
}

namespace detail {

inline data::Dataset fit_to_model(const data::Dataset& d, const model::ModelConfig& cfg) {
  if (d.empty()) return d;
  for (const auto& c : d.chips) {
    if (c.size < cfg.chip_size) {
      throw DataError("train: chip of size " + std::to_string(c.size) + " smaller than model chip size " + std::to_string(cfg.chip_size));
    }
  }
  return d.cropped(cfg.chip_size);
}

}  // namespace detail

// Minimises MSE with Adam under warmup + cosine annealing, keeping the
// parameters with the lowest validation loss. A non-finite loss or gradient
// stops training and returns the last good (best) parameters with
// `aborted` set.
inline TrainResult train(const model::ModelParams& init_params, const TrainConfig& cfg, const data::Dataset& train_set,
                         const data::Dataset& val_set) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  data::check_no_leakage({&train_set.samples, &val_set.samples}, cfg.grid);
  const auto& mcfg = cfg.model;
  const auto tr = detail::fit_to_model(train_set, mcfg);
  const auto va = detail::fit_to_model(val_set, mcfg);

  TrainResult result;
  auto params = init_params.clone();
  if (cfg.normalize_targets) {
    const auto t = tr.targets();
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    double var = 0.0;
    for (double v : t) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(t.size()));
    params.get("target.mean").mutable_values()[0] = mean;
    params.get("target.std").mutable_values()[0] = sd > 0.0 ? sd : 1.0;
  }

  const std::size_t n = tr.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const auto schedule = numerics::LrSchedule::for_total(cfg.lr, steps_per_epoch * cfg.epochs, cfg.warmup_fraction, cfg.min_lr);
  numerics::AdamState adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.adam_eps;
  adam.weight_decay = cfg.weight_decay;
  auto trainable = params.trainable();

  const bool has_val = !va.empty();

  EpochLog first{0, dataset_mse(params, mcfg, tr), has_val ? dataset_mse(params, mcfg, va) : std::numeric_limits<double>::quiet_NaN(), 0.0};
  result.log.push_back(first);
  result.params = params.clone();
  double best = has_val ? first.val_loss : first.train_loss;
  std::size_t stagnant = 0;

  numerics::RngStream root(cfg.seed, 0x7261696e);
  std::vector<std::size_t> order(n);
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = root.fork(2 * epoch);
    auto dropout_rng = root.fork(2 * epoch + 1);
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    double lr = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    try {
      for (std::size_t start = 0; start < n; start += cfg.batch_size) {
        const std::size_t end = std::min(n, start + cfg.batch_size);
        std::vector<data::ImageChip> chips;
        std::vector<double> targets;
        for (std::size_t i = start; i < end; ++i) {
          chips.push_back(tr.chips[order[i]]);
          targets.push_back(tr.samples[order[i]].richness);
        }
        params.zero_grad();
        const auto pred = model::forward_batch(params, mcfg, chips, model::RunMode::training(mcfg), &dropout_rng);
        const auto loss = numerics::mse_loss(pred, targets);
        loss.backward();
        lr = numerics::lr_at(schedule, step);
        adam.lr = lr;
        if (!numerics::adam_step(trainable, adam)) throw NumericError("non-finite gradient at epoch " + std::to_string(epoch));
        ++step;
        loss_sum += loss.item() * static_cast<double>(end - start);
      }
      if (!params.all_finite()) throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));
      if (has_val) val_loss = dataset_mse(params, mcfg, va);
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = e.what();
      break;
    }

    EpochLog entry{epoch, loss_sum / static_cast<double>(n), val_loss, lr};
    result.log.push_back(entry);
    const double sel = has_val ? entry.val_loss : entry.train_loss;
    if (sel < best) {
      best = sel;
      result.best_epoch = epoch;
      result.params = params.clone();
      stagnant = 0;
    } else if (++stagnant >= cfg.patience) {
      break;
    }
  }
  params.zero_grad();
  return result;
}

inline MetricsReport evaluate(const model::ModelParams& p, const model::ModelConfig& cfg, const data::Dataset& test_set) {
  if (test_set.empty()) throw DataError("evaluate: empty test set");
  const auto d = detail::fit_to_model(test_set, cfg);
  const auto pred = model::predict(p, cfg, d.chips);
  return compute_metrics(d.targets(), pred);
}

struct AblationRow {
  std::size_t chip_size = 0;
  MetricsReport metrics;
  std::size_t best_epoch = 0;
};

// One full train + evaluate per chip size, all from the same seed; chips are
// centre-cropped from the stored size.
inline std::vector<AblationRow> ablate_chip_size(const TrainConfig& tmpl, const std::vector<std::size_t>& sizes, const data::Dataset& train_set,
                                                 const data::Dataset& val_set, const data::Dataset& test_set) {
  std::vector<AblationRow> rows;
  for (auto size : sizes) {
    auto cfg = tmpl;
    cfg.model.chip_size = size;
    numerics::RngStream init_rng(cfg.seed, 0x696e6974);
    const auto p0 = model::init(cfg.model, init_rng);
    const auto res = train(p0, cfg, train_set, val_set);
    if (res.aborted) throw NumericError("ablation at chip size " + std::to_string(size) + " aborted: " + res.abort_reason);
    rows.push_back({size, evaluate(res.params, cfg.model, test_set), res.best_epoch});
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "chip_size," + metrics_csv_header() + "\n";
  for (const auto& r : rows) out += std::to_string(r.chip_size) + "," + metrics_csv_row(r.metrics) + "\n";
  return out;
}

}  // namespace spatioformer::train
