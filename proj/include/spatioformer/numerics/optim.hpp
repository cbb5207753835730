#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "spatioformer/numerics/tensor.hpp"

namespace spatioformer::numerics {

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// One Adam update over `params` using their accumulated gradients. Weight
// decay is decoupled: param -= lr * (mhat / (sqrt(vhat) + eps) + wd * param).
// Returns false, leaving params and state untouched, if any gradient is
// non-finite. A param without a gradient is treated as having zero gradient.
inline bool adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: moment buffers do not match the parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: moment buffer " + std::to_string(i) + " does not match " + shape_str(params[i].shape()));
    }
    if (!params[i].has_grad()) continue;
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) return false;
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_values();
    const bool has = params[i].has_grad();
    const auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= state.lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * w[j]);
    }
  }
  return true;
}

// Linear warmup to base_lr, then cosine annealing to min_lr over each period
// with warm restarts.
struct LrSchedule {
  double base_lr = 1e-3;
  std::uint64_t warmup_steps = 0;
  std::uint64_t period_steps = 1;
  double min_lr = 0.0;

  // Default shape: 5% warmup, one cosine period spanning the rest.
  static LrSchedule for_total(double base_lr, std::uint64_t total_steps, double warmup_fraction = 0.05, double min_lr = 0.0) {
    LrSchedule s;
    s.base_lr = base_lr;
    s.min_lr = min_lr;
    s.warmup_steps = static_cast<std::uint64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
    s.period_steps = total_steps > s.warmup_steps ? total_steps - s.warmup_steps : 1;
    return s;
  }
};

inline double lr_at(const LrSchedule& s, std::uint64_t step) {
  if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const std::uint64_t period = s.period_steps == 0 ? 1 : s.period_steps;
  const double t = static_cast<double>((step - s.warmup_steps) % period);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(period)));
}

}  // namespace spatioformer::numerics
