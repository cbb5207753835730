#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spatioformer/error.hpp"
#include "spatioformer/format.hpp"

namespace spatioformer::train {

// The seven-metric suite. RAE and RSE use raw-magnitude denominators:
//   rae = sum|e| / sum|y|,  rse = sum e^2 / sum y^2
// and r2 is the square of Pearson r. Both choices are isolated in
// compute_metrics().
struct MetricsReport {
  double r = 0.0;
  double r2 = 0.0;
  double mae = 0.0;
  double rae = 0.0;
  double mse = 0.0;
  double rse = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
  std::vector<std::string> warnings;
};

inline MetricsReport compute_metrics(std::span<const double> y, std::span<const double> yhat) {
  if (y.empty()) throw DataError("metrics: empty evaluation set");
  if (y.size() != yhat.size()) throw DataError("metrics: prediction count does not match target count");
  MetricsReport m;
  m.n = y.size();
  const double n = static_cast<double>(y.size());
  double my = 0.0, mp = 0.0, sum_abs_e = 0.0, sum_e2 = 0.0, sum_abs_y = 0.0, sum_y2 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = yhat[i] - y[i];
    my += y[i];
    mp += yhat[i];
    sum_abs_e += std::abs(e);
    sum_e2 += e * e;
    sum_abs_y += std::abs(y[i]);
    sum_y2 += y[i] * y[i];
  }
  my /= n;
  mp /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sxy += (y[i] - my) * (yhat[i] - mp);
    sxx += (y[i] - my) * (y[i] - my);
    syy += (yhat[i] - mp) * (yhat[i] - mp);
  }
  if (sxx == 0.0 || syy == 0.0) {
    m.r = std::numeric_limits<double>::quiet_NaN();
    m.warnings.push_back(sxx == 0.0 ? "zero-variance ground truth: r undefined" : "zero-variance predictions: r undefined");
  } else {
    m.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  }
  m.r2 = m.r * m.r;
  m.mae = sum_abs_e / n;
  m.mse = sum_e2 / n;
  m.rmse = std::sqrt(m.mse);
  m.rae = sum_abs_y > 0.0 ? sum_abs_e / sum_abs_y : std::numeric_limits<double>::quiet_NaN();
  m.rse = sum_y2 > 0.0 ? sum_e2 / sum_y2 : std::numeric_limits<double>::quiet_NaN();
  if (sum_abs_y == 0.0) m.warnings.push_back("all-zero ground truth: rae and rse undefined");
  return m;
}

inline std::string metrics_csv_header() { return "r,r2,mae,rae,mse,rse,rmse,n"; }

inline std::string metrics_csv_row(const MetricsReport& m) {
  return format_double(m.r) + "," + format_double(m.r2) + "," + format_double(m.mae) + "," + format_double(m.rae) + "," +
         format_double(m.mse) + "," + format_double(m.rse) + "," + format_double(m.rmse) + "," + std::to_string(m.n);
}

inline std::string metrics_table(const MetricsReport& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "  r     %10.4f\n  r2    %10.4f\n  MAE   %10.4f\n  RAE   %10.4f\n  MSE   %10.4f\n  RSE   %10.4f\n  RMSE  %10.4f\n  n     %10zu\n",
                m.r, m.r2, m.mae, m.rae, m.mse, m.rse, m.rmse, m.n);
  return buf;
}

}  // namespace spatioformer::train
