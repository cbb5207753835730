#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/data/samples.hpp"
#include "spatioformer/model/forward.hpp"

namespace spatioformer::uncert {

struct UncertaintyConfig {
  std::size_t n = 100;
  double mc_dropout_rate = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw ConfigError("uncertainty: need n >= 2 repetitions");
    if (!(mc_dropout_rate > 0.0 && mc_dropout_rate < 1.0)) throw ConfigError("uncertainty: mc_dropout_rate must lie in (0,1)");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UncertaintyConfig, n, mc_dropout_rate, seed)

struct McEstimate {
  double deterministic = std::numeric_limits<double>::quiet_NaN();  // dropout-off forward
  double mean = 0.0;
  double std = 0.0;  // n-1 denominator
  double epsilon = std::numeric_limits<double>::quiet_NaN();
  bool epsilon_defined = false;  // false when the mean is exactly zero
};

namespace detail {

// Neumaier compensated sum.
inline double compensated_sum(std::span<const double> xs) {
  double s = 0.0, c = 0.0;
  for (double x : xs) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

}  // namespace detail

// Mean, sample std and coefficient of variation of a set of predictions.
inline McEstimate mc_statistics(std::span<const double> preds) {
  if (preds.size() < 2) throw ConfigError("uncertainty: need at least 2 predictions");
  McEstimate e;
  const double n = static_cast<double>(preds.size());
  e.mean = detail::compensated_sum(preds) / n;
  std::vector<double> sq(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) sq[i] = (preds[i] - e.mean) * (preds[i] - e.mean);
  e.std = std::sqrt(detail::compensated_sum(sq) / (n - 1.0));
  if (e.mean != 0.0) {
    e.epsilon = e.std / e.mean;
    e.epsilon_defined = true;
  }
  return e;
}

// n stochastic forwards of one chip with dropout on at the training sites.
// Repetition r draws its masks from RngStream(seed, r), so the estimate for
// a chip does not depend on what else is being processed.
inline McEstimate mc_uncertainty(const model::ModelParams& p, const model::ModelConfig& cfg, const data::ImageChip& chip,
                                 const UncertaintyConfig& ucfg) {
  ucfg.validate();
  const auto one = std::span<const data::ImageChip>(&chip, 1);
  std::vector<double> preds(ucfg.n);
  const auto mode = model::RunMode::mc_dropout(ucfg.mc_dropout_rate);
  for (std::size_t r = 0; r < ucfg.n; ++r) {
    numerics::RngStream rng(ucfg.seed, r);
    preds[r] = model::forward_batch(p, cfg, one, mode, &rng).item();
  }
  auto e = mc_statistics(preds);
  e.deterministic = model::forward_batch(p, cfg, one, model::RunMode::inference()).item();
  return e;
}

// id, y_det, y_mc, epsilon ("undefined" when the MC mean is zero)
inline std::string uncertainty_csv(const std::vector<data::SampleRecord>& samples, const std::vector<McEstimate>& est) {
  if (samples.size() != est.size()) throw DataError("uncertainty csv: sample and estimate counts differ");
  std::string out = "id,y_det,y_mc,epsilon\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out += samples[i].id + "," + format_double(est[i].deterministic) + "," + format_double(est[i].mean) + "," +
           (est[i].epsilon_defined ? format_double(est[i].epsilon) : std::string("undefined")) + "\n";
  }
  return out;
}

}  // namespace spatioformer::uncert
