#include <gtest/gtest.h>

#include <cmath>

#include "spatioformer/data/synth.hpp"
#include "spatioformer/train/metrics.hpp"
#include "spatioformer/train/train.hpp"
#include "support.hpp"

using namespace spatioformer;
using namespace spatioformer::train;

namespace {

data::Dataset make_data(const data::SynthConfig& s, std::size_t n, std::uint64_t seed) {
  numerics::RngStream rng(seed, 0);
  return data::synth_generate(s, n, rng);
}

struct Splits {
  data::Dataset train, val, test;
};

Splits split(const data::Dataset& d, std::uint64_t seed) {
  const auto a = data::split_by_tiles(d.samples, data::TileGrid{}, {0.8, 0.1, 0.1}, seed);
  return {d.subset(a.indices(d.samples, data::Split::train)), d.subset(a.indices(d.samples, data::Split::val)),
          d.subset(a.indices(d.samples, data::Split::test))};
}

TrainConfig small_train(model::ModelKind kind, std::size_t chip, std::size_t epochs) {
  TrainConfig c;
  c.model = sf_test::small_config(kind, chip);
  c.epochs = epochs;
  c.batch_size = 32;
  c.seed = 5;
  return c;
}

model::ModelParams init_for(const TrainConfig& c) {
  numerics::RngStream rng(c.seed, 0x696e6974);
  return model::init(c.model, rng);
}

}  // namespace

TEST(Metrics, HandExample) {
  const std::vector<double> y{10, 20, 30}, p{12, 18, 33};
  const auto m = compute_metrics(y, p);
  // Deviations from the means 20 and 21: (-10,0,10) and (-9,-3,12).
  const double r = 210.0 / std::sqrt(200.0 * 234.0);
  EXPECT_NEAR(m.r, r, 1e-12);
  EXPECT_NEAR(m.r2, r * r, 1e-12);
  EXPECT_NEAR(m.mae, 7.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.rae, 7.0 / 60.0, 1e-12);
  EXPECT_NEAR(m.mse, 17.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.rse, 17.0 / 1400.0, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(17.0 / 3.0), 1e-12);
  EXPECT_EQ(m.n, 3u);
  EXPECT_TRUE(m.warnings.empty());
}

TEST(Metrics, PerfectPredictions) {
  const std::vector<double> y{3, 1, 4, 1, 5};
  const auto m = compute_metrics(y, y);
  EXPECT_DOUBLE_EQ(m.r, 1.0);
  EXPECT_DOUBLE_EQ(m.r2, 1.0);
  for (double v : {m.mae, m.rae, m.mse, m.rse, m.rmse}) EXPECT_EQ(v, 0.0);
}

TEST(Metrics, ConstantOffsetDecouplesCorrelationFromError) {
  const std::vector<double> y{1, 7, 3, 9};
  std::vector<double> p;
  for (double v : y) p.push_back(v + 5);
  const auto m = compute_metrics(y, p);
  EXPECT_NEAR(m.r, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.mae, 5.0);
}

TEST(Metrics, IdentitiesOnRandomData) {
  numerics::RngStream rng(1, 0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(50);
    std::vector<double> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(0, 80);
      p[i] = y[i] + rng.normal(0, 10);
    }
    const auto m = compute_metrics(y, p);
    EXPECT_GE(m.r, -1.0);
    EXPECT_LE(m.r, 1.0);
    EXPECT_NEAR(m.r2, m.r * m.r, 1e-12);
    EXPECT_NEAR(m.rmse * m.rmse, m.mse, 1e-12 * std::max(1.0, m.mse));
    for (double v : {m.mae, m.rae, m.mse, m.rse, m.rmse}) EXPECT_GE(v, 0.0);
  }
}

TEST(Metrics, RelativeErrorsScaleInvariant) {
  numerics::RngStream rng(2, 0);
  std::vector<double> y(30), p(30);
  for (std::size_t i = 0; i < 30; ++i) {
    y[i] = rng.uniform(1, 50);
    p[i] = rng.uniform(1, 50);
  }
  const auto a = compute_metrics(y, p);
  for (double k : {0.01, 3.0, 1e4}) {
    std::vector<double> ys, ps;
    for (std::size_t i = 0; i < 30; ++i) {
      ys.push_back(k * y[i]);
      ps.push_back(k * p[i]);
    }
    const auto b = compute_metrics(ys, ps);
    EXPECT_NEAR(b.rae, a.rae, 1e-12);
    EXPECT_NEAR(b.rse, a.rse, 1e-12);
    EXPECT_NEAR(b.r, a.r, 1e-12);
  }
}

TEST(Metrics, ZeroVarianceTruthGivesNaNWithWarning) {
  const std::vector<double> y{5, 5, 5}, p{4, 5, 6};
  const auto m = compute_metrics(y, p);
  EXPECT_TRUE(std::isnan(m.r));
  EXPECT_TRUE(std::isnan(m.r2));
  EXPECT_FALSE(m.warnings.empty());
  EXPECT_NEAR(m.mae, 2.0 / 3.0, 1e-15);
}

TEST(Metrics, RejectsBadInput) {
  EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<double>{}), DataError);
  EXPECT_THROW(compute_metrics(std::vector<double>{1, 2}, std::vector<double>{1}), DataError);
}

TEST(Metrics, CsvShape) {
  const auto m = compute_metrics(std::vector<double>{10, 20, 30}, std::vector<double>{12, 18, 33});
  EXPECT_EQ(metrics_csv_header(), "r,r2,mae,rae,mse,rse,rmse,n");
  const auto row = metrics_csv_row(m);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 7);
  EXPECT_EQ(row.substr(row.size() - 2), ",3");
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.model.chip_size = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.min_lr = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, JsonDefaultsFillMissingKeys) {
  const auto c = nlohmann::json::parse(R"({"epochs": 7, "model": {"kind": "vit"}})").get<TrainConfig>();
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.model.kind, model::ModelKind::vit);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.weight_decay, 1e-4);
}

TEST(Train, OneSampleOverfits) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto d = make_data(s, 1, 3);
  auto c = small_train(model::ModelKind::spatioformer, 1, 300);
  c.model.dropout = 0.0;
  c.normalize_targets = false;
  c.lr = 1e-2;
  c.batch_size = 1;
  c.patience = 300;
  const auto res = train::train(init_for(c), c, d, data::Dataset{});
  EXPECT_FALSE(res.aborted);
  EXPECT_LT(dataset_mse(res.params, c.model, d), 1e-4);
}

TEST(Train, NoiselessLossFallsTenfold) {
  data::SynthConfig s;
  s.chip_size = 1;
  s.regions = 2;
  s.slopes = {40.0, 40.0};  // same law everywhere
  s.noise_sd = 0.0;
  const auto parts = split(make_data(s, 600, 4), 1);
  auto c = small_train(model::ModelKind::spatioformer, 1, 40);
  c.lr = 3e-3;
  const auto res = train::train(init_for(c), c, parts.train, parts.val);
  ASSERT_FALSE(res.aborted);
  const double start = res.log.front().train_loss;
  const double end = dataset_mse(res.params, c.model, parts.train);
  EXPECT_LT(end * 10.0, start) << start << " -> " << end;
}

TEST(Train, SameSeedSameCurveAndCheckpoint) {
  data::SynthConfig s;
  s.chip_size = 3;
  const auto parts = split(make_data(s, 200, 5), 2);
  for (auto kind : {model::ModelKind::spatioformer, model::ModelKind::cnn}) {
    const auto c = small_train(kind, 3, 3);
    const auto a = train::train(init_for(c), c, parts.train, parts.val);
    const auto b = train::train(init_for(c), c, parts.train, parts.val);
    EXPECT_EQ(epoch_log_csv(a.log), epoch_log_csv(b.log));
    EXPECT_EQ(model::encode_params(a.params, c.model), model::encode_params(b.params, c.model));
    auto c2 = c;
    c2.seed = 6;
    const auto other = train::train(init_for(c), c2, parts.train, parts.val);
    EXPECT_NE(epoch_log_csv(a.log), epoch_log_csv(other.log));
  }
}

TEST(Train, LogStartsAtEpochZeroWithZeroLr) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto parts = split(make_data(s, 150, 6), 3);
  const auto c = small_train(model::ModelKind::vit, 1, 4);
  const auto res = train::train(init_for(c), c, parts.train, parts.val);
  ASSERT_EQ(res.log.size(), 5u);
  EXPECT_EQ(res.log[0].epoch, 0u);
  EXPECT_EQ(res.log[0].lr, 0.0);
  for (std::size_t e = 1; e < res.log.size(); ++e) EXPECT_GT(res.log[e].lr, 0.0);
  const auto csv = epoch_log_csv(res.log);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,lr");
}

TEST(Train, BestValidationCheckpointKept) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto parts = split(make_data(s, 300, 7), 4);
  const auto c = small_train(model::ModelKind::spatioformer, 1, 8);
  const auto res = train::train(init_for(c), c, parts.train, parts.val);
  double best = res.log[0].val_loss;
  for (const auto& e : res.log) best = std::min(best, e.val_loss);
  EXPECT_DOUBLE_EQ(dataset_mse(res.params, c.model, parts.val), best);
  EXPECT_DOUBLE_EQ(res.log[res.best_epoch].val_loss, best);
}

TEST(Train, EarlyStopsAfterPatience) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto parts = split(make_data(s, 150, 8), 5);
  auto c = small_train(model::ModelKind::vit, 1, 200);
  c.patience = 3;
  c.lr = 3e-2;
  const auto res = train::train(init_for(c), c, parts.train, parts.val);
  ASSERT_LT(res.log.size(), 201u);
  // Stopped exactly `patience` epochs after the best one.
  EXPECT_EQ(res.log.back().epoch, res.best_epoch + c.patience);
}

TEST(Train, DivergenceAbortsKeepingLastGood) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto parts = split(make_data(s, 200, 9), 6);
  auto c = small_train(model::ModelKind::spatioformer, 1, 5);
  c.lr = 1e250;
  c.warmup_fraction = 0.0;
  const auto res = train::train(init_for(c), c, parts.train, parts.val);
  EXPECT_TRUE(res.aborted);
  EXPECT_FALSE(res.abort_reason.empty());
  EXPECT_TRUE(res.params.all_finite());
  EXPECT_EQ(res.best_epoch, 0u);
}

TEST(Train, LeakageFailsBeforeTraining) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto d = make_data(s, 50, 10);
  auto val = d.subset({0});
  val.samples[0].id = "copy";
  const auto c = small_train(model::ModelKind::vit, 1, 1);
  EXPECT_THROW(train::train(init_for(c), c, d, val), DataError);
}

TEST(Train, ChipTooSmallForModelRejected) {
  data::SynthConfig s;
  s.chip_size = 1;
  const auto parts = split(make_data(s, 80, 11), 7);
  const auto c = small_train(model::ModelKind::vit, 3, 1);
  EXPECT_THROW(train::train(init_for(c), c, parts.train, parts.val), DataError);
}

TEST(Evaluate, MatchesMetricsOfPredictions) {
  data::SynthConfig s;
  s.chip_size = 3;
  const auto d = make_data(s, 40, 12);
  const auto c = small_train(model::ModelKind::vit, 1, 1);
  const auto p = init_for(c);
  const auto m = evaluate(p, c.model, d);
  const auto cropped = d.cropped(1);
  const auto pred = model::predict(p, c.model, cropped.chips);
  const auto ref = compute_metrics(d.targets(), pred);
  EXPECT_EQ(m.mse, ref.mse);
  EXPECT_EQ(m.r, ref.r);
  EXPECT_THROW(evaluate(p, c.model, data::Dataset{}), DataError);
}

TEST(Ablation, NeighbourhoodSignalFavoursThreeByThree) {
  data::SynthConfig s;
  s.chip_size = 3;
  s.regions = 2;
  s.slopes = {40.0, 40.0};  // same law everywhere
  s.noise_sd = 0.0;
  s.signal = data::SpectralSignal::neighborhood_texture;
  const auto parts = split(make_data(s, 800, 13), 8);
  auto c = small_train(model::ModelKind::spatioformer, 1, 25);
  c.lr = 3e-3;
  const auto rows = ablate_chip_size(c, {1, 3}, parts.train, parts.val, parts.test);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_LT(rows[1].metrics.mse, rows[0].metrics.mse) << rows[0].metrics.mse << " vs " << rows[1].metrics.mse;
  const auto csv = ablation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "chip_size,r,r2,mae,rae,mse,rse,rmse,n");
}
