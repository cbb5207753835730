#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "spatioformer/data/chip.hpp"
#include "spatioformer/model/forward.hpp"
#include "spatioformer/numerics/rng.hpp"
#include "spatioformer/numerics/tensor.hpp"

namespace sf_test {

using spatioformer::numerics::RngStream;
using spatioformer::numerics::Tensor;

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor): relative where the gradient is resolvable,
// absolute below `floor`, which sits above the round-off of the central
// difference.
inline double rel_err(double a, double n, double floor) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}); }

// Central differences against backward() for `samples` entries of every
// tensor in `params` (all entries when the tensor is smaller).
inline GradCheck gradcheck(std::vector<std::pair<std::string, Tensor>> params, const std::function<Tensor()>& loss, std::size_t samples,
                           RngStream& pick, double h_rel = 1e-6, double floor = 1e-6) {
  for (auto& [n, t] : params) t.zero_grad();
  auto l = loss();
  l.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& [n, t] : params) {
    if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
    else analytic.emplace_back(t.size(), 0.0);
  }

  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].second;
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > samples) {
      pick.shuffle(std::span<std::size_t>(idx));
      idx.resize(samples);
    }
    for (auto i : idx) {
      auto v = t.mutable_values();
      const double x = v[i];
      const double h = h_rel * std::max(1.0, std::abs(x));
      v[i] = x + h;
      const double fp = loss().item();
      t.mutable_values()[i] = x - h;
      const double fm = loss().item();
      t.mutable_values()[i] = x;
      const double num = (fp - fm) / (2.0 * h);
      const double e = rel_err(analytic[k][i], num, floor);
      ++out.checked;
      if (e > out.max_rel) {
        out.max_rel = e;
        out.worst = params[k].first + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[k][i]) + " numeric " + std::to_string(num);
      }
    }
  }
  return out;
}

inline Tensor random_tensor(spatioformer::numerics::Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  auto t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

inline spatioformer::data::ImageChip random_chip(std::size_t size, std::size_t bands, RngStream& rng, double lon, double lat,
                                                 double pitch = spatioformer::data::kPixelPitch30m) {
  auto c = spatioformer::data::ImageChip::blank(size, bands, lon, lat, pitch);
  for (auto& v : c.reflectance) v = rng.uniform(0.02, 0.6);
  return c;
}

// Small but structurally complete models for fast tests.
inline spatioformer::model::ModelConfig small_config(spatioformer::model::ModelKind kind, std::size_t chip = 3) {
  spatioformer::model::ModelConfig c;
  c.kind = kind;
  c.chip_size = chip;
  c.head_hidden = 32;
  c.ffn_dim = 32;
  return c;
}

}  // namespace sf_test
