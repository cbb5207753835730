#pragma once

#include <string>

#include "json.hpp"

#include "spatioformer/error.hpp"
#include "spatioformer/geoenc.hpp"

namespace spatioformer::model {

enum class ModelKind { spatioformer, vit, cnn };

NLOHMANN_JSON_SERIALIZE_ENUM(ModelKind, {{ModelKind::spatioformer, "spatioformer"}, {ModelKind::vit, "vit"}, {ModelKind::cnn, "cnn"}})

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::spatioformer: return "spatioformer";
    case ModelKind::vit: return "vit";
    case ModelKind::cnn: return "cnn";
  }
  return "?";
}

inline ModelKind parse_kind(const std::string& s) {
  if (s == "spatioformer") return ModelKind::spatioformer;
  if (s == "vit") return ModelKind::vit;
  if (s == "cnn") return ModelKind::cnn;
  throw ConfigError("unknown model kind '" + s + "' (expected spatioformer, vit or cnn)");
}

// Architecture of one model. Defaults are the full-size Spatioformer
// setup: 16-d pixel embedding and geo token, 3 encoder layers of 8 heads,
// 64-d FFN, FC head with 1024 hidden units, dropout 0.1, lambda_0 = 1e4.
struct ModelConfig {
  ModelKind kind = ModelKind::spatioformer;
  std::size_t chip_size = 9;
  std::size_t bands = 6;
  std::size_t embed_dim = 16;
  std::size_t geo_dim = 16;
  std::size_t layers = 3;
  std::size_t heads = 8;
  std::size_t ffn_dim = 64;
  std::size_t head_hidden = 1024;
  double dropout = 0.1;
  double lambda_init = 1e4;
  // Spatioformer only: prepend the learnable geolocation-independent token.
  bool global_token = true;
  // Reflectance in [0,1] is multiplied by this before embedding, putting it
  // on the 0..10000 integer scale of surface-reflectance products that
  // lambda_init is sized against.
  double input_scale = 1e4;
  double token_init_range = 0.02;
  std::size_t cnn_layers = 3;
  std::size_t cnn_filters = 8;
  std::size_t cnn_kernel = 3;
  geo::GeoEncoderConfig geo;

  void validate() const {
    if (chip_size == 0 || chip_size % 2 == 0) throw ConfigError("model: chip_size must be odd and positive");
    if (bands == 0) throw ConfigError("model: bands must be positive");
    if (kind != ModelKind::cnn) {
      if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) throw ConfigError("model: embed_dim must be divisible by heads");
      if (kind == ModelKind::spatioformer) {
        if (embed_dim != geo_dim || geo.d != geo_dim) throw ConfigError("model: embed_dim, geo_dim and geo.d must agree");
        geo.validate();
      }
      if (ffn_dim == 0) throw ConfigError("model: ffn_dim must be positive");
    } else {
      if (chip_size < cnn_kernel) throw ConfigError("model: CNN needs chips of at least " + std::to_string(cnn_kernel) + "x" + std::to_string(cnn_kernel));
      if (cnn_kernel % 2 == 0 || cnn_filters == 0 || cnn_layers == 0) throw ConfigError("model: invalid CNN geometry");
    }
    if (head_hidden == 0) throw ConfigError("model: head_hidden must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0,1)");
    if (!(input_scale > 0.0)) throw ConfigError("model: input_scale must be positive");
  }

  std::size_t pixels() const { return chip_size * chip_size; }
  bool uses_global_token() const { return kind == ModelKind::spatioformer && global_token; }
  std::size_t seq_len() const { return pixels() + (uses_global_token() ? 1 : 0); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, kind, chip_size, bands, embed_dim, geo_dim, layers, heads, ffn_dim, head_hidden,
                                                dropout, lambda_init, global_token, input_scale, token_init_range, cnn_layers, cnn_filters,
                                                cnn_kernel, geo)

// How a forward pass treats stochastic and batch-dependent layers.
struct RunMode {
  bool dropout = false;
  double dropout_rate = 0.0;
  bool batch_stats = false;  // CNN batch norm: batch statistics vs running averages

  static RunMode inference() { return {}; }
  static RunMode training(const ModelConfig& cfg) { return {cfg.dropout > 0.0, cfg.dropout, true}; }
  // Dropout active at `rate`, batch norm in inference mode.
  static RunMode mc_dropout(double rate) { return {true, rate, false}; }
};

}  // namespace spatioformer::model
