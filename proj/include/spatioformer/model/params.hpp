#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/model/config.hpp"
#include "spatioformer/numerics/checkpoint.hpp"
#include "spatioformer/numerics/rng.hpp"
#include "spatioformer/numerics/tensor.hpp"

namespace spatioformer::model {

using numerics::Shape;
using numerics::Tensor;

// The full state of one model as an ordered set of named tensors. Buffers
// (batch-norm running statistics, target normalisation) are stored and
// serialised with the weights but are not trained.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
  };

  ModelParams() = default;
  explicit ModelParams(ModelKind kind) : kind_(kind) {}

  ModelKind kind() const { return kind_; }

  void add(std::string name, Tensor t, bool trainable = true) {
    if (contains(name)) throw ConfigError("model params: duplicate tensor '" + name + "'");
    t.set_requires_grad(trainable);
    entries_.push_back({std::move(name), std::move(t), trainable});
  }

  bool contains(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return true;
    }
    return false;
  }

  // Returned handles share storage with the stored tensor.
  const Tensor& get(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return e.tensor;
    }
    throw ConfigError("model params: no tensor named '" + name + "'");
  }
  Tensor& get(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return e.tensor;
    }
    throw ConfigError("model params: no tensor named '" + name + "'");
  }

  void remove(const std::string& name) {
    std::erase_if(entries_, [&](const Entry& e) { return e.name == name; });
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::vector<Tensor> trainable() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) {
      if (e.trainable) out.push_back(e.tensor);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable) n += e.tensor.size();
    }
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  ModelParams clone() const {
    ModelParams out(kind_);
    for (const auto& e : entries_) out.add(e.name, e.tensor.detach(), e.trainable);
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      for (double v : e.tensor.values()) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

 private:
  ModelKind kind_ = ModelKind::spatioformer;
  std::vector<Entry> entries_;
};

inline std::string encode_params(const ModelParams& p, const ModelConfig& cfg) {
  std::vector<numerics::NamedTensor> tensors;
  std::vector<std::string> buffers;
  for (const auto& e : p.entries()) {
    tensors.push_back({e.name, e.tensor});
    if (!e.trainable) buffers.push_back(e.name);
  }
  nlohmann::json extra;
  extra["config"] = cfg;
  extra["buffers"] = buffers;
  return numerics::encode_checkpoint(tensors, extra);
}

struct LoadedModel {
  ModelParams params;
  ModelConfig config;
};

inline LoadedModel decode_params(std::string_view bytes) {
  auto decoded = numerics::decode_checkpoint(bytes);
  LoadedModel out;
  try {
    out.config = decoded.extra.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: missing or malformed model config: ") + e.what());
  }
  out.config.validate();
  const auto buffers = decoded.extra.value("buffers", std::vector<std::string>{});
  out.params = ModelParams(out.config.kind);
  for (auto& nt : decoded.tensors) {
    const bool buffer = std::find(buffers.begin(), buffers.end(), nt.name) != buffers.end();
    out.params.add(nt.name, nt.tensor, !buffer);
  }
  if (!out.params.all_finite()) throw DataError("checkpoint: non-finite parameter values");
  return out;
}

inline void save_params(const ModelParams& p, const ModelConfig& cfg, const std::filesystem::path& path) {
  numerics::write_file_bytes(path, encode_params(p, cfg));
}

inline LoadedModel load_params(const std::filesystem::path& path) { return decode_params(numerics::read_file_bytes(path)); }

namespace detail {

inline Tensor uniform_tensor(Shape shape, double bound, numerics::RngStream& rng) {
  auto t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.uniform(-bound, bound);
  return t;
}

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor linear_weight(std::size_t fan_in, std::size_t fan_out, numerics::RngStream& rng) {
  return uniform_tensor({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace detail

// Seeded initialisation of every tensor the model kind needs.
inline ModelParams init(const ModelConfig& cfg, numerics::RngStream& rng) {
  cfg.validate();
  ModelParams p(cfg.kind);
  const std::size_t d = cfg.embed_dim;
  std::size_t flat = 0;

  if (cfg.kind == ModelKind::cnn) {
    std::size_t in_ch = cfg.bands;
    const std::size_t k = cfg.cnn_kernel;
    for (std::size_t l = 0; l < cfg.cnn_layers; ++l) {
      const std::string pre = "conv" + std::to_string(l);
      const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
      p.add(pre + ".weight", detail::uniform_tensor({cfg.cnn_filters, in_ch, k, k}, bound, rng));
      p.add(pre + ".bias", Tensor::zeros({cfg.cnn_filters}));
      const std::string bn = "bn" + std::to_string(l);
      p.add(bn + ".gamma", Tensor::full({cfg.cnn_filters}, 1.0));
      p.add(bn + ".beta", Tensor::zeros({cfg.cnn_filters}));
      p.add(bn + ".running_mean", Tensor::zeros({cfg.cnn_filters}), false);
      p.add(bn + ".running_var", Tensor::full({cfg.cnn_filters}, 1.0), false);
      in_ch = cfg.cnn_filters;
    }
    flat = cfg.cnn_filters * cfg.pixels();
  } else {
    p.add("embed.weight", detail::linear_weight(cfg.bands, d, rng));
    if (cfg.kind == ModelKind::spatioformer) {
      p.add("lambda", Tensor::scalar(cfg.lambda_init));
      if (cfg.global_token) p.add("global_token", detail::uniform_tensor({1, d}, cfg.token_init_range, rng));
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      p.add(pre + "ln1.gamma", Tensor::full({d}, 1.0));
      p.add(pre + "ln1.beta", Tensor::zeros({d}));
      p.add(pre + "attn.wq", detail::linear_weight(d, d, rng));
      p.add(pre + "attn.wk", detail::linear_weight(d, d, rng));
      p.add(pre + "attn.wv", detail::linear_weight(d, d, rng));
      p.add(pre + "attn.wo", detail::linear_weight(d, d, rng));
      p.add(pre + "attn.bo", Tensor::zeros({d}));
      p.add(pre + "ln2.gamma", Tensor::full({d}, 1.0));
      p.add(pre + "ln2.beta", Tensor::zeros({d}));
      p.add(pre + "ffn.w1", detail::linear_weight(d, cfg.ffn_dim, rng));
      p.add(pre + "ffn.b1", Tensor::zeros({cfg.ffn_dim}));
      p.add(pre + "ffn.w2", detail::linear_weight(cfg.ffn_dim, d, rng));
      p.add(pre + "ffn.b2", Tensor::zeros({d}));
    }
    p.add("final_ln.gamma", Tensor::full({d}, 1.0));
    p.add("final_ln.beta", Tensor::zeros({d}));
    flat = cfg.seq_len() * d;
  }

  p.add("head.fc1.weight", detail::linear_weight(flat, cfg.head_hidden, rng));
  p.add("head.fc1.bias", Tensor::zeros({cfg.head_hidden}));
  p.add("head.fc2.weight", detail::linear_weight(cfg.head_hidden, 1, rng));
  p.add("head.fc2.bias", Tensor::zeros({1}));
  // Output is head * target.std + target.mean; set from the training targets.
  p.add("target.mean", Tensor::scalar(0.0), false);
  p.add("target.std", Tensor::scalar(1.0), false);
  return p;
}

}  // namespace spatioformer::model
