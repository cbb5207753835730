#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "spatioformer/numerics/rng.hpp"
#include "spatioformer/numerics/tensor.hpp"

// Differentiable tensor operations. Each records a backward closure when any
// input requires gradients. Everything is 64-bit and single-threaded per graph.
namespace spatioformer::numerics {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_finite_input(const Tensor& t, const char* op) {
  for (double x : t.values()) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = pb.value.data() + p * n;
          const double* grow = g.data() + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          pa.grad[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = pa.value[i * k + p];
          if (s == 0.0) continue;
          double* dst = pb.grad.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += s * grow[j];
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

// a[m x n] + bias[n] broadcast over rows.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_rank(a, 2, "add_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.size() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return detail::make_result("add_bias", a.shape(), std::move(out), {a, bias}, [m, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
      }
    }
  });
}

// s * a with s a learnable single-element tensor.
inline Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("scale: factor must have one element, got " + shape_str(s.shape()));
  const double f = s.item();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x *= f;
  return detail::make_result("scale", a.shape(), std::move(out), {a, s}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& ps = *self.parents[1];
    const double f = ps.value[0];
    double acc = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += f * self.grad[i];
      acc += pa.value[i] * self.grad[i];
    }
    if (ps.requires_grad) ps.grad[0] += acc;
  });
}

// mul * a + offset with constant coefficients.
inline Tensor affine(const Tensor& a, double mul, double offset) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x = mul * x + offset;
  return detail::make_result("affine", a.shape(), std::move(out), {a}, [mul](detail::Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += mul * self.grad[i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return detail::make_result("relu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
    }
  });
}

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  return detail::make_result("gelu", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = pa.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      pa.grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

// Row-wise softmax over the last axis of a rank-2 tensor, stabilised by
// subtracting the row maximum.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require_rank(a, 2, "softmax_rows");
  detail::require_finite_input(a, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return detail::make_result("softmax_rows", a.shape(), out, {a}, [m, n, y = out](detail::Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

// Per-row layer normalisation with affine gamma/beta of length n.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.size() != n || beta.size() != n) {
    throw ShapeError("layer_norm_rows: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xv[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
    }
  }
  return detail::make_result(
      "layer_norm_rows", x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double g = self.grad[i * n + j];
            if (pg.requires_grad) pg.grad[j] += g * xhat[i * n + j];
            if (pb.requires_grad) pb.grad[j] += g;
            dxhat[j] = g * pg.value[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * n + j];
          }
          if (!px.requires_grad) continue;
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            px.grad[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      });
}

// Inverted dropout. With training == false (or rate == 0) the input tensor
// itself is returned, so inference is bit-identical to identity.
inline Tensor dropout(const Tensor& a, double rate, RngStream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.size());
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return detail::make_result("dropout", a.shape(), std::move(out), {a}, [mask = std::move(mask)](detail::Node& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += mask[i] * self.grad[i];
  });
}

// x is [groups*per_group x d]; inserts `token` (d values) ahead of every
// group, giving [groups*(per_group+1) x d].
inline Tensor prepend_token(const Tensor& x, const Tensor& token, std::size_t groups) {
  detail::require_rank(x, 2, "prepend_token");
  const std::size_t d = x.dim(1);
  if (token.size() != d) {
    throw ShapeError("prepend_token: token " + shape_str(token.shape()) + " does not match rows of " + shape_str(x.shape()));
  }
  if (groups == 0 || x.dim(0) % groups != 0) {
    throw ShapeError("prepend_token: " + std::to_string(x.dim(0)) + " rows not divisible into " + std::to_string(groups) + " groups");
  }
  const std::size_t per = x.dim(0) / groups;
  const std::size_t t = per + 1;
  std::vector<double> out(groups * t * d);
  const auto xv = x.values();
  const auto tv = token.values();
  for (std::size_t g = 0; g < groups; ++g) {
    std::copy(tv.begin(), tv.end(), out.begin() + static_cast<std::ptrdiff_t>(g * t * d));
    std::copy(xv.begin() + static_cast<std::ptrdiff_t>(g * per * d), xv.begin() + static_cast<std::ptrdiff_t>((g + 1) * per * d),
              out.begin() + static_cast<std::ptrdiff_t>((g * t + 1) * d));
  }
  return detail::make_result("prepend_token", {groups * t, d}, std::move(out), {x, token}, [groups, per, t, d](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pt = *self.parents[1];
    for (std::size_t g = 0; g < groups; ++g) {
      if (pt.requires_grad) {
        for (std::size_t c = 0; c < d; ++c) pt.grad[c] += self.grad[g * t * d + c];
      }
      if (px.requires_grad) {
        for (std::size_t i = 0; i < per * d; ++i) px.grad[g * per * d + i] += self.grad[(g * t + 1) * d + i];
      }
    }
  });
}

// Pre-softmax scaled dot-product logits for one (group, head) pair of
// row-stacked q/k [groups*seq_len x dim]: logits[i][j] = q_i . k_j / sqrt(dim/heads).
inline std::vector<double> attention_logits(std::span<const double> q, std::span<const double> k, std::size_t dim,
                                            std::size_t seq_len, std::size_t heads, std::size_t group, std::size_t head) {
  const std::size_t dk = dim / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t base = group * seq_len;
  const std::size_t off = head * dk;
  std::vector<double> logits(seq_len * seq_len);
  for (std::size_t i = 0; i < seq_len; ++i) {
    const double* qi = q.data() + (base + i) * dim + off;
    for (std::size_t j = 0; j < seq_len; ++j) {
      const double* kj = k.data() + (base + j) * dim + off;
      double dot = 0.0;
      for (std::size_t c = 0; c < dk; ++c) dot += qi[c] * kj[c];
      logits[i * seq_len + j] = dot * sc;
    }
  }
  return logits;
}

inline void softmax_inplace(std::span<double> logits, std::size_t n) {
  for (std::size_t i = 0; i < logits.size() / n; ++i) {
    double* row = logits.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
}

// Multi-head scaled dot-product self-attention over groups of seq_len rows.
// q, k, v: [groups*seq_len x dim]; heads split dim into equal slices.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len, std::size_t heads) {
  detail::require_rank(q, 2, "multi_head_attention");
  detail::require_same_shape(q, k, "multi_head_attention");
  detail::require_same_shape(q, v, "multi_head_attention");
  const std::size_t rows = q.dim(0), dim = q.dim(1);
  if (seq_len == 0 || rows % seq_len != 0) throw ShapeError("multi_head_attention: rows not divisible by sequence length");
  if (heads == 0 || dim % heads != 0) throw ShapeError("multi_head_attention: dim not divisible by heads");
  const std::size_t groups = rows / seq_len;
  const std::size_t dk = dim / heads;
  const std::size_t tt = seq_len * seq_len;

  std::vector<double> probs(groups * heads * tt);
  std::vector<double> out(rows * dim, 0.0);
  const auto vv = v.values();
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      auto p = attention_logits(q.values(), k.values(), dim, seq_len, heads, g, h);
      softmax_inplace(p, seq_len);
      std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>((g * heads + h) * tt));
      for (std::size_t i = 0; i < seq_len; ++i) {
        double* oi = out.data() + (g * seq_len + i) * dim + h * dk;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const double w = p[i * seq_len + j];
          const double* vj = vv.data() + (g * seq_len + j) * dim + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  return detail::make_result(
      "multi_head_attention", q.shape(), std::move(out), {q, k, v},
      [groups, heads, seq_len, dim, dk, tt, probs = std::move(probs)](detail::Node& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
        std::vector<double> dp(tt);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* p = probs.data() + (g * heads + h) * tt;
            auto row = [&](std::size_t i) { return (g * seq_len + i) * dim + h * dk; };
            for (std::size_t i = 0; i < seq_len; ++i) {
              const double* gi = self.grad.data() + row(i);
              for (std::size_t j = 0; j < seq_len; ++j) {
                const double* vj = pv.value.data() + row(j);
                double acc = 0.0;
                for (std::size_t c = 0; c < dk; ++c) acc += gi[c] * vj[c];
                dp[i * seq_len + j] = acc;
                if (pv.requires_grad) {
                  double* dvj = pv.grad.data() + row(j);
                  const double w = p[i * seq_len + j];
                  for (std::size_t c = 0; c < dk; ++c) dvj[c] += w * gi[c];
                }
              }
            }
            for (std::size_t i = 0; i < seq_len; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < seq_len; ++j) dot += dp[i * seq_len + j] * p[i * seq_len + j];
              for (std::size_t j = 0; j < seq_len; ++j) {
                const double ds = p[i * seq_len + j] * (dp[i * seq_len + j] - dot) * sc;
                if (ds == 0.0) continue;
                if (pq.requires_grad) {
                  double* dqi = pq.grad.data() + row(i);
                  const double* kj = pk.value.data() + row(j);
                  for (std::size_t c = 0; c < dk; ++c) dqi[c] += ds * kj[c];
                }
                if (pk.requires_grad) {
                  double* dkj = pk.grad.data() + row(j);
                  const double* qi = pq.value.data() + row(i);
                  for (std::size_t c = 0; c < dk; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

// 2-D cross-correlation, stride 1, zero padding k/2 (same-size output).
// x: [batch, in_ch, h, w]; weight: [out_ch, in_ch, k, k]; bias: [out_ch].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  const std::size_t nb = x.dim(0), ci = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  const std::size_t co = weight.dim(0), ks = weight.dim(2);
  if (weight.dim(1) != ci || weight.dim(3) != ks || ks % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  }
  if (bias.size() != co) throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(co) + " filters");
  const auto pad = static_cast<std::ptrdiff_t>(ks / 2);
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  std::vector<double> out(nb * co * hh * ww);

  // Visits every (output, input, weight) index triple once.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < ks; ++ky)
            for (std::size_t kx = 0; kx < ks; ++kx) {
              const std::size_t wi = ((o * ci + c) * ks + ky) * ks + kx;
              for (std::size_t y = 0; y < hh; ++y) {
                const auto sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(hh)) continue;
                for (std::size_t xx = 0; xx < ww; ++xx) {
                  const auto sx = static_cast<std::ptrdiff_t>(xx + kx) - pad;
                  if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(ww)) continue;
                  const std::size_t oi = ((b * co + o) * hh + y) * ww + xx;
                  const std::size_t ii = ((b * ci + c) * hh + static_cast<std::size_t>(sy)) * ww + static_cast<std::size_t>(sx);
                  fn(oi, ii, wi);
                }
              }
            }
  };

  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t o = 0; o < co; ++o)
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((b * co + o) * hh * ww), hh * ww, bv[o]);
  for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += wv[wi] * xv[ii]; });

  return detail::make_result("conv2d", {nb, co, hh, ww}, std::move(out), {x, weight, bias},
                             [for_each_tap, nb, co, hw = hh * ww](detail::Node& self) {
                               auto& px = *self.parents[0];
                               auto& pw = *self.parents[1];
                               auto& pb = *self.parents[2];
                               for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) {
                                 const double g = self.grad[oi];
                                 if (px.requires_grad) px.grad[ii] += pw.value[wi] * g;
                                 if (pw.requires_grad) pw.grad[wi] += px.value[ii] * g;
                               });
                               if (pb.requires_grad) {
                                 for (std::size_t b = 0; b < nb; ++b)
                                   for (std::size_t o = 0; o < co; ++o)
                                     for (std::size_t i = 0; i < hw; ++i) pb.grad[o] += self.grad[(b * co + o) * hw + i];
                               }
                             });
}

// Per-channel batch normalisation of x: [batch, ch, h, w]. Training mode
// normalises with batch statistics (biased variance) and updates the running
// buffers in place with the unbiased variance; inference uses the buffers.
inline Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean, Tensor& running_var,
                           bool training, double momentum = 0.1, double eps = 1e-5) {
  detail::require_rank(x, 4, "batch_norm2d");
  const std::size_t nb = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.size() != ch || beta.size() != ch || running_mean.size() != ch || running_var.size() != ch) {
    throw ShapeError("batch_norm2d: per-channel parameters do not match " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  const std::size_t count = nb * hw;
  std::vector<double> mean(ch), inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (training) {
      double mu = 0.0;
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < hw; ++i) mu += xv[(b * ch + c) * hw + i];
      mu /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xv[(b * ch + c) * hw + i] - mu;
          var += d * d;
        }
      const double biased = var / static_cast<double>(count);
      const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : 0.0;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(biased + eps);
      auto rm = running_mean.mutable_values();
      auto rv = running_var.mutable_values();
      rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
    } else {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }
  std::vector<double> xhat(xv.size()), out(xv.size());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * ch + c) * hw + i;
        xhat[idx] = (xv[idx] - mean[c]) * inv_std[c];
        out[idx] = gamma[c] * xhat[idx] + beta[c];
      }
  return detail::make_result(
      "batch_norm2d", x.shape(), std::move(out), {x, gamma, beta},
      [nb, ch, hw, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t c = 0; c < ch; ++c) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (b * ch + c) * hw + i;
              const double g = self.grad[idx];
              if (pg.requires_grad) pg.grad[c] += g * xhat[idx];
              if (pb.requires_grad) pb.grad[c] += g;
              sum_d += g * pg.value[c];
              sum_dx += g * pg.value[c] * xhat[idx];
            }
          if (!px.requires_grad) continue;
          const double mean_d = sum_d / static_cast<double>(count);
          const double mean_dx = sum_dx / static_cast<double>(count);
          for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (b * ch + c) * hw + i;
              const double dxhat = self.grad[idx] * pg.value[c];
              px.grad[idx] += training ? inv_std[c] * (dxhat - mean_d - xhat[idx] * mean_dx) : inv_std[c] * dxhat;
            }
        }
      });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return detail::make_result("sum", {1}, {s}, {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

// Mean squared error between predictions (any shape, n elements) and targets.
inline Tensor mse_loss(const Tensor& pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("mse_loss: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(target.size()) + " targets");
  }
  const auto pv = pred.values();
  const double n = static_cast<double>(pv.size());
  std::vector<double> diff(pv.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    diff[i] = pv[i] - target[i];
    s += diff[i] * diff[i];
  }
  return detail::make_result("mse_loss", {1}, {s / n}, {pred}, [diff = std::move(diff), n](detail::Node& self) {
    auto& pp = *self.parents[0];
    for (std::size_t i = 0; i < diff.size(); ++i) pp.grad[i] += self.grad[0] * 2.0 * diff[i] / n;
  });
}

}  // namespace spatioformer::numerics
