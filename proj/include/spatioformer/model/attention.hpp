#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spatioformer/model/forward.hpp"

// Four-way split of Spatioformer attention logits into pixel/geo
// interactions.
//
// A layer's residual input for token i is r_i = x_i + lambda * g_i, where g_i
// is the raw geo token (zero for the global token) and x_i := r_i - lambda g_i
// is everything else (the pixel embedding at layer 0). The pre-norm layer
// norm is affine in r_i once its row statistics are fixed, so the attention
// input splits exactly as
//
//   LN(r_i) = xt_i + lambda * gt_i
//   xt_i = gamma * (x_i - mean(x_i)) / sigma_i + beta
//   gt_i = gamma * (g_i - mean(g_i)) / sigma_i
//
// with sigma_i taken from r_i. Expanding the scaled dot product then gives
//
//   logit_ij = [xt_i Wq . xt_j Wk]         pixel-to-pixel
//            + [xt_i Wq . lambda gt_j Wk]  pixel-to-geolocation
//            + [lambda gt_i Wq . xt_j Wk]  geolocation-to-pixel
//            + [lambda gt_i Wq . lambda gt_j Wk]  geolocation-to-geolocation
//
// each divided by sqrt(d_head).
namespace spatioformer::model {

struct AttentionDecomposition {
  std::size_t tokens = 0;  // m; token 0 is the global token when present
  std::vector<double> term_pp;
  std::vector<double> term_pg;
  std::vector<double> term_gp;
  std::vector<double> term_gg;
  std::vector<double> full;  // logits the model actually feeds to softmax

  double at(const std::vector<double>& grid, std::size_t i, std::size_t j) const { return grid[i * tokens + j]; }
};

namespace detail {

inline void check_layer_head(const ModelConfig& cfg, std::size_t layer, std::size_t head) {
  if (layer >= cfg.layers) throw ConfigError("attention: layer " + std::to_string(layer) + " out of range (" + std::to_string(cfg.layers) + " layers)");
  if (head >= cfg.heads) throw ConfigError("attention: head " + std::to_string(head) + " out of range (" + std::to_string(cfg.heads) + " heads)");
}

// Columns [head*dk, (head+1)*dk) of rows * w, for [m x d] rows and [d x d] w.
inline std::vector<double> project_head(const std::vector<double>& rows, std::size_t m, std::size_t d, std::span<const double> w,
                                        std::size_t head, std::size_t dk) {
  std::vector<double> out(m * dk, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double x = rows[i * d + a];
      for (std::size_t c = 0; c < dk; ++c) out[i * dk + c] += x * w[a * d + head * dk + c];
    }
  return out;
}

inline std::vector<double> scaled_dots(const std::vector<double>& q, const std::vector<double>& k, std::size_t m, std::size_t dk) {
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> out(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dk; ++c) s += q[i * dk + c] * k[j * dk + c];
      out[i * m + j] = s * sc;
    }
  return out;
}

}  // namespace detail

inline AttentionDecomposition attention_decompose(const ModelParams& p, const ModelConfig& cfg, const data::ImageChip& chip, std::size_t layer,
                                                  std::size_t head) {
  if (cfg.kind != ModelKind::spatioformer) throw ConfigError("attention_decompose: only defined for the spatioformer model");
  detail::check_layer_head(cfg, layer, head);
  TransformerTrace trace;
  transformer_forward(p, cfg, std::span<const data::ImageChip>(&chip, 1), RunMode::inference(), nullptr, true, cfg.global_token, &trace);

  const std::size_t m = trace.seq_len;
  const std::size_t d = cfg.embed_dim;
  const std::size_t dk = d / cfg.heads;
  const double lambda = trace.lambda;
  const std::string pre = "layers." + std::to_string(layer) + ".";
  const auto gamma = p.get(pre + "ln1.gamma").values();
  const auto beta = p.get(pre + "ln1.beta").values();
  const auto r = trace.layer_inputs[layer].values();
  const auto g = trace.geo.values();
  constexpr double eps = 1e-5;  // must match layer_norm_rows

  std::vector<double> xt(m * d), gt(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    double mr = 0.0, mx = 0.0, mg = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      mr += r[i * d + c];
      mg += g[i * d + c];
      mx += r[i * d + c] - lambda * g[i * d + c];
    }
    mr /= static_cast<double>(d);
    mx /= static_cast<double>(d);
    mg /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (r[i * d + c] - mr) * (r[i * d + c] - mr);
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(d) + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double x = r[i * d + c] - lambda * g[i * d + c];
      xt[i * d + c] = gamma[c] * (x - mx) * inv + beta[c];
      gt[i * d + c] = lambda * gamma[c] * (g[i * d + c] - mg) * inv;
    }
  }

  const auto wq = p.get(pre + "attn.wq").values();
  const auto wk = p.get(pre + "attn.wk").values();
  const auto qp = detail::project_head(xt, m, d, wq, head, dk);
  const auto kp = detail::project_head(xt, m, d, wk, head, dk);
  const auto qg = detail::project_head(gt, m, d, wq, head, dk);
  const auto kg = detail::project_head(gt, m, d, wk, head, dk);

  AttentionDecomposition out;
  out.tokens = m;
  out.term_pp = detail::scaled_dots(qp, kp, m, dk);
  out.term_pg = detail::scaled_dots(qp, kg, m, dk);
  out.term_gp = detail::scaled_dots(qg, kp, m, dk);
  out.term_gg = detail::scaled_dots(qg, kg, m, dk);

  // Fused logits along the model's own path.
  const auto h = numerics::layer_norm_rows(trace.layer_inputs[layer], p.get(pre + "ln1.gamma").detach(), p.get(pre + "ln1.beta").detach());
  const auto q = numerics::matmul(h, p.get(pre + "attn.wq").detach());
  const auto k = numerics::matmul(h, p.get(pre + "attn.wk").detach());
  out.full = numerics::attention_logits(q.values(), k.values(), d, m, cfg.heads, 0, head);
  return out;
}

// Post-softmax attention weights of one layer/head for a single chip
// ([seq_len x seq_len], row i attends over columns j).
inline std::vector<double> attention_probabilities(const ModelParams& p, const ModelConfig& cfg, const data::ImageChip& chip, std::size_t layer,
                                                   std::size_t head) {
  if (cfg.kind == ModelKind::cnn) throw ConfigError("attention_probabilities: CNN has no attention");
  detail::check_layer_head(cfg, layer, head);
  TransformerTrace trace;
  const bool spatio = cfg.kind == ModelKind::spatioformer;
  transformer_forward(p, cfg, std::span<const data::ImageChip>(&chip, 1), RunMode::inference(), nullptr, spatio, spatio && cfg.global_token,
                      &trace);
  const std::string pre = "layers." + std::to_string(layer) + ".";
  const auto h = numerics::layer_norm_rows(trace.layer_inputs[layer], p.get(pre + "ln1.gamma").detach(), p.get(pre + "ln1.beta").detach());
  const auto q = numerics::matmul(h, p.get(pre + "attn.wq").detach());
  const auto k = numerics::matmul(h, p.get(pre + "attn.wk").detach());
  auto probs = numerics::attention_logits(q.values(), k.values(), cfg.embed_dim, trace.seq_len, cfg.heads, 0, head);
  numerics::softmax_inplace(probs, trace.seq_len);
  return probs;
}

}  // namespace spatioformer::model
