#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "spatioformer/data/chip.hpp"
#include "spatioformer/geoenc.hpp"
#include "spatioformer/model/config.hpp"
#include "spatioformer/model/params.hpp"
#include "spatioformer/numerics/ops.hpp"

namespace spatioformer::model {

namespace ops = numerics;

namespace detail {

inline void check_chips(const ModelConfig& cfg, std::span<const data::ImageChip> chips) {
  if (chips.empty()) throw ConfigError("forward: empty batch");
  for (const auto& c : chips) {
    if (c.size != cfg.chip_size || c.bands != cfg.bands) {
      throw ConfigError("forward: chip " + std::to_string(c.size) + "x" + std::to_string(c.size) + "x" + std::to_string(c.bands) +
                        " does not match model " + std::to_string(cfg.chip_size) + "x" + std::to_string(cfg.chip_size) + "x" +
                        std::to_string(cfg.bands));
    }
    if (!std::isfinite(c.center_lon) || !std::isfinite(c.center_lat) || !(c.pixel_pitch > 0.0)) {
      throw DataError("forward: chip lacks valid pixel coordinates");
    }
  }
}

// Pixel tokens, one row per pixel (row-major within each chip), scaled
// reflectance in the columns.
inline Tensor pixel_rows(const ModelConfig& cfg, std::span<const data::ImageChip> chips) {
  const std::size_t p = cfg.pixels();
  std::vector<double> v(chips.size() * p * cfg.bands);
  for (std::size_t b = 0; b < chips.size(); ++b)
    for (std::size_t r = 0; r < cfg.chip_size; ++r)
      for (std::size_t c = 0; c < cfg.chip_size; ++c)
        for (std::size_t k = 0; k < cfg.bands; ++k)
          v[((b * p) + r * cfg.chip_size + c) * cfg.bands + k] = cfg.input_scale * chips[b].at(k, r, c);
  return Tensor({chips.size() * p, cfg.bands}, std::move(v));
}

// Geo tokens at each pixel centre, aligned with pixel_rows.
inline Tensor geo_rows(const ModelConfig& cfg, std::span<const data::ImageChip> chips) {
  const std::size_t p = cfg.pixels();
  const std::size_t d = cfg.geo_dim;
  std::vector<double> v(chips.size() * p * d);
  for (std::size_t b = 0; b < chips.size(); ++b)
    for (std::size_t r = 0; r < cfg.chip_size; ++r)
      for (std::size_t c = 0; c < cfg.chip_size; ++c) {
        const std::size_t row = b * p + r * cfg.chip_size + c;
        geo::encode_into(cfg.geo, chips[b].pixel_lon(c), chips[b].pixel_lat(r), std::span<double>(v).subspan(row * d, d));
      }
  return Tensor({chips.size() * p, d}, std::move(v));
}

// FC(hidden) -> ReLU -> dropout -> FC(1), then target de-normalisation.
inline Tensor regression_head(const ModelParams& p, const Tensor& flat, const RunMode& mode, numerics::RngStream* rng) {
  auto z = ops::relu(ops::add_bias(ops::matmul(flat, p.get("head.fc1.weight")), p.get("head.fc1.bias")));
  if (mode.dropout) z = ops::dropout(z, mode.dropout_rate, *rng, true);
  auto y = ops::add_bias(ops::matmul(z, p.get("head.fc2.weight")), p.get("head.fc2.bias"));
  return ops::affine(y, p.get("target.std").item(), p.get("target.mean").item());
}

inline void require_rng(const RunMode& mode, numerics::RngStream* rng) {
  if (mode.dropout && mode.dropout_rate > 0.0 && rng == nullptr) throw ConfigError("forward: dropout requested without an RngStream");
}

}  // namespace detail

// Residual-stream snapshots captured during a transformer forward pass.
struct TransformerTrace {
  std::size_t seq_len = 0;
  std::vector<Tensor> layer_inputs;  // [batch*seq_len x d] entering each layer
  Tensor geo;                        // [batch*seq_len x d] raw geo tokens, zero rows for the global token
  double lambda = 0.0;
};

// Shared transformer path for Spatioformer and ViT.
//
//   pixel embedding -> (+ lambda * geo token) -> (prepend global token)
//   -> layers x [pre-norm MHSA + residual, pre-norm GELU FFN + residual]
//   -> final layer norm -> flatten all tokens -> FC head
//
// use_geo / use_token select the Spatioformer additions; with both off this
// is the ViT baseline.
inline Tensor transformer_forward(const ModelParams& p, const ModelConfig& cfg, std::span<const data::ImageChip> chips, const RunMode& mode,
                                  numerics::RngStream* rng, bool use_geo, bool use_token, TransformerTrace* trace = nullptr) {
  detail::check_chips(cfg, chips);
  detail::require_rng(mode, rng);
  const std::size_t batch = chips.size();
  const std::size_t d = cfg.embed_dim;

  auto s = ops::matmul(detail::pixel_rows(cfg, chips), p.get("embed.weight"));
  Tensor geo_rows;
  if (use_geo) {
    geo_rows = detail::geo_rows(cfg, chips);
    s = ops::add(s, ops::scale(geo_rows, p.get("lambda")));
  }
  std::size_t seq = cfg.pixels();
  if (use_token) {
    s = ops::prepend_token(s, p.get("global_token"), batch);
    ++seq;
  }
  if (trace) {
    trace->seq_len = seq;
    trace->lambda = use_geo ? p.get("lambda").item() : 0.0;
    trace->layer_inputs.clear();
    if (use_geo) {
      trace->geo = use_token ? ops::prepend_token(geo_rows, Tensor::zeros({1, d}), batch).detach() : geo_rows;
    } else {
      trace->geo = Tensor::zeros({batch * seq, d});
    }
  }

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    if (trace) trace->layer_inputs.push_back(s.detach());
    auto h = ops::layer_norm_rows(s, p.get(pre + "ln1.gamma"), p.get(pre + "ln1.beta"));
    auto q = ops::matmul(h, p.get(pre + "attn.wq"));
    auto k = ops::matmul(h, p.get(pre + "attn.wk"));
    auto v = ops::matmul(h, p.get(pre + "attn.wv"));
    auto a = ops::multi_head_attention(q, k, v, seq, cfg.heads);
    auto o = ops::add_bias(ops::matmul(a, p.get(pre + "attn.wo")), p.get(pre + "attn.bo"));
    if (mode.dropout) o = ops::dropout(o, mode.dropout_rate, *rng, true);
    s = ops::add(s, o);

    auto h2 = ops::layer_norm_rows(s, p.get(pre + "ln2.gamma"), p.get(pre + "ln2.beta"));
    auto f = ops::gelu(ops::add_bias(ops::matmul(h2, p.get(pre + "ffn.w1")), p.get(pre + "ffn.b1")));
    f = ops::add_bias(ops::matmul(f, p.get(pre + "ffn.w2")), p.get(pre + "ffn.b2"));
    if (mode.dropout) f = ops::dropout(f, mode.dropout_rate, *rng, true);
    s = ops::add(s, f);
  }
  s = ops::layer_norm_rows(s, p.get("final_ln.gamma"), p.get("final_ln.beta"));
  auto flat = ops::reshape(s, {batch, seq * d});
  return detail::regression_head(p, flat, mode, rng);
}

// Spatioformer batch forward; returns [batch x 1] predicted richness.
inline Tensor forward_spatioformer(const ModelParams& p, const ModelConfig& cfg, std::span<const data::ImageChip> chips, const RunMode& mode,
                                   numerics::RngStream* rng = nullptr) {
  return transformer_forward(p, cfg, chips, mode, rng, true, cfg.global_token, nullptr);
}

inline Tensor forward_vit(const ModelParams& p, const ModelConfig& cfg, std::span<const data::ImageChip> chips, const RunMode& mode,
                          numerics::RngStream* rng = nullptr) {
  return transformer_forward(p, cfg, chips, mode, rng, false, false, nullptr);
}

// 3 x [conv 3x3 (pad 1) -> ReLU -> batch norm] -> flatten -> FC head.
// In batch-statistics mode the running averages stored in `p` are updated.
inline Tensor forward_cnn(const ModelParams& p, const ModelConfig& cfg, std::span<const data::ImageChip> chips, const RunMode& mode,
                          numerics::RngStream* rng = nullptr) {
  detail::check_chips(cfg, chips);
  detail::require_rng(mode, rng);
  const std::size_t batch = chips.size();
  const std::size_t n = cfg.chip_size;
  std::vector<double> v;
  v.reserve(batch * cfg.bands * n * n);
  for (const auto& c : chips)
    for (double x : c.reflectance) v.push_back(cfg.input_scale * x);
  Tensor s({batch, cfg.bands, n, n}, std::move(v));
  for (std::size_t l = 0; l < cfg.cnn_layers; ++l) {
    const std::string conv = "conv" + std::to_string(l);
    const std::string bn = "bn" + std::to_string(l);
    s = ops::relu(ops::conv2d(s, p.get(conv + ".weight"), p.get(conv + ".bias")));
    Tensor rm = p.get(bn + ".running_mean");
    Tensor rv = p.get(bn + ".running_var");
    s = ops::batch_norm2d(s, p.get(bn + ".gamma"), p.get(bn + ".beta"), rm, rv, mode.batch_stats);
  }
  auto flat = ops::reshape(s, {batch, cfg.cnn_filters * n * n});
  return detail::regression_head(p, flat, mode, rng);
}

inline Tensor forward_batch(const ModelParams& p, const ModelConfig& cfg, std::span<const data::ImageChip> chips, const RunMode& mode,
                            numerics::RngStream* rng = nullptr) {
  if (p.kind() != cfg.kind) throw ConfigError("forward: parameters are for a different model kind");
  switch (cfg.kind) {
    case ModelKind::spatioformer: return forward_spatioformer(p, cfg, chips, mode, rng);
    case ModelKind::vit: return forward_vit(p, cfg, chips, mode, rng);
    case ModelKind::cnn: return forward_cnn(p, cfg, chips, mode, rng);
  }
  throw ConfigError("forward: unknown model kind");
}

// Single-chip prediction in species per 400 m2.
inline double forward(const ModelParams& p, const ModelConfig& cfg, const data::ImageChip& chip, bool training = false,
                      numerics::RngStream* rng = nullptr) {
  const auto mode = training ? RunMode::training(cfg) : RunMode::inference();
  return forward_batch(p, cfg, std::span<const data::ImageChip>(&chip, 1), mode, rng).item();
}

inline std::vector<double> predict(const ModelParams& p, const ModelConfig& cfg, std::span<const data::ImageChip> chips,
                                   std::size_t batch_size = 256) {
  std::vector<double> out;
  out.reserve(chips.size());
  for (std::size_t i = 0; i < chips.size(); i += batch_size) {
    const auto part = chips.subspan(i, std::min(batch_size, chips.size() - i));
    const auto y = forward_batch(p, cfg, part, RunMode::inference());
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

}  // namespace spatioformer::model
