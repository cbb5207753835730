#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "spatioformer/uncert.hpp"
#include "support.hpp"

using namespace spatioformer;
using namespace spatioformer::uncert;

namespace {

struct Fixture {
  model::ModelConfig cfg = sf_test::small_config(model::ModelKind::spatioformer);
  model::ModelParams p;
  data::ImageChip chip;
  Fixture() {
    numerics::RngStream rng(21, 0);
    p = model::init(cfg, rng);
    p.get("target.mean").mutable_values()[0] = 25.0;
    p.get("target.std").mutable_values()[0] = 6.0;
    chip = sf_test::random_chip(3, 6, rng, 145.0, -37.0);
  }
};

}  // namespace

TEST(McStatistics, TwoPredictionsByHand) {
  const std::vector<double> v{8, 12};
  const auto e = mc_statistics(v);
  EXPECT_NEAR(e.mean, 10.0, 1e-12);
  EXPECT_NEAR(e.std, std::sqrt(8.0), 1e-12);
  EXPECT_NEAR(e.epsilon, 0.28284271247461906, 1e-9);
  EXPECT_TRUE(e.epsilon_defined);
}

TEST(McStatistics, ConstantPredictionsGiveZero) {
  const std::vector<double> v{10, 10, 10, 10};
  const auto e = mc_statistics(v);
  EXPECT_EQ(e.mean, 10.0);
  EXPECT_EQ(e.epsilon, 0.0);
}

TEST(McStatistics, ScaleInvariance) {
  numerics::RngStream rng(1, 0);
  std::vector<double> v(100);
  for (auto& x : v) x = rng.uniform(5, 40);
  const auto a = mc_statistics(v);
  for (double k : {1e-3, 0.5, 7.0, 1e5}) {
    std::vector<double> w;
    for (double x : v) w.push_back(k * x);
    const auto b = mc_statistics(w);
    EXPECT_NEAR(b.epsilon, a.epsilon, 1e-12);
    EXPECT_NEAR(b.mean, k * a.mean, 1e-12 * k * a.mean);
  }
}

TEST(McStatistics, ZeroMeanFlaggedNotDivided) {
  const std::vector<double> v{-1, 1, -2, 2};
  const auto e = mc_statistics(v);
  EXPECT_EQ(e.mean, 0.0);
  EXPECT_FALSE(e.epsilon_defined);
  EXPECT_TRUE(std::isnan(e.epsilon));
}

TEST(McStatistics, OrderInsensitive) {
  numerics::RngStream rng(2, 0);
  std::vector<double> v(100);
  for (auto& x : v) x = rng.uniform(-1e3, 1e3) + 1e8;
  const auto a = mc_statistics(v);
  std::reverse(v.begin(), v.end());
  rng.shuffle(std::span<double>(v));
  const auto b = mc_statistics(v);
  EXPECT_NEAR(a.mean, b.mean, 1e-12 * std::abs(a.mean));
  EXPECT_NEAR(a.std, b.std, 1e-12 * a.std + 1e-12);
}

TEST(McStatistics, NeedsTwo) {
  EXPECT_THROW(mc_statistics(std::vector<double>{1.0}), ConfigError);
}

TEST(UncertaintyConfig, DefaultsAndValidation) {
  const UncertaintyConfig c;
  EXPECT_EQ(c.n, 100u);
  EXPECT_EQ(c.mc_dropout_rate, 0.5);
  EXPECT_THROW((UncertaintyConfig{1, 0.5, 0}).validate(), ConfigError);
  EXPECT_THROW((UncertaintyConfig{10, 0.0, 0}).validate(), ConfigError);
  EXPECT_THROW((UncertaintyConfig{10, 1.0, 0}).validate(), ConfigError);
}

TEST(McUncertainty, VanishingRateRecoversDeterministic) {
  Fixture f;
  const auto e = mc_uncertainty(f.p, f.cfg, f.chip, UncertaintyConfig{20, 1e-9, 3});
  EXPECT_NEAR(e.mean, e.deterministic, 1e-6 * std::abs(e.deterministic));
  EXPECT_LT(std::abs(e.epsilon), 1e-6);
}

TEST(McUncertainty, SameSeedBitIdentical) {
  Fixture f;
  const UncertaintyConfig u{30, 0.5, 4};
  const auto a = mc_uncertainty(f.p, f.cfg, f.chip, u), b = mc_uncertainty(f.p, f.cfg, f.chip, u);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.epsilon, b.epsilon);
  const auto c = mc_uncertainty(f.p, f.cfg, f.chip, UncertaintyConfig{30, 0.5, 5});
  EXPECT_NE(a.mean, c.mean);
}

TEST(McUncertainty, MatchesStatisticsOfReplayedForwards) {
  Fixture f;
  const UncertaintyConfig u{10, 0.3, 6};
  std::vector<double> preds;
  for (std::size_t r = 0; r < u.n; ++r) {
    numerics::RngStream rng(u.seed, r);
    preds.push_back(model::forward_batch(f.p, f.cfg, std::span<const data::ImageChip>(&f.chip, 1), model::RunMode::mc_dropout(0.3), &rng).item());
  }
  const auto e = mc_uncertainty(f.p, f.cfg, f.chip, u);
  EXPECT_EQ(e.mean, mc_statistics(preds).mean);
  EXPECT_GT(e.std, 0.0);
  EXPECT_EQ(e.deterministic, model::forward(f.p, f.cfg, f.chip));
}

TEST(McUncertainty, CsvMarksUndefined) {
  McEstimate a, b;
  a.deterministic = 1.5;
  a.mean = 2.0;
  a.epsilon = 0.25;
  a.epsilon_defined = true;
  b.deterministic = 0.0;
  const std::vector<data::SampleRecord> s{{"x", 0, 0, 2020, 1, ""}, {"y", 0, 0, 2020, 1, ""}};
  const auto csv = uncertainty_csv(s, {a, b});
  EXPECT_EQ(csv, "id,y_det,y_mc,epsilon\nx,1.5,2,0.25\ny,0,0,undefined\n");
  EXPECT_THROW(uncertainty_csv(s, {a}), DataError);
}
