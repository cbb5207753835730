#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/data/chip.hpp"
#include "spatioformer/model/forward.hpp"
#include "spatioformer/raster.hpp"
#include "spatioformer/uncert.hpp"

namespace spatioformer::mapper {

// Grids sharing one geometry: the bands of a scene, or one year per member
// when aggregating maps.
struct RasterStack {
  std::vector<RasterGrid> grids;

  std::size_t size() const { return grids.size(); }
  const RasterGrid& front() const { return grids.front(); }

  void validate(const char* what) const {
    if (grids.empty()) throw DataError(std::string(what) + ": empty raster stack");
    for (const auto& g : grids) {
      g.validate();
      if (!g.same_geometry(grids.front())) {
        throw DataError(std::string(what) + ": raster '" + g.band + "/" + g.tag + "' geometry differs from '" + grids.front().band + "/" +
                        grids.front().tag + "'");
      }
    }
  }
};

enum class MaskFill { scene_mean, zero };

NLOHMANN_JSON_SERIALIZE_ENUM(MaskFill, {{MaskFill::scene_mean, "scene_mean"}, {MaskFill::zero, "zero"}})

struct MapConfig {
  std::size_t chip_size = 9;
  std::size_t tile_size = 64;  // cells per tile side
  MaskFill mask_fill = MaskFill::scene_mean;
  std::string tag;

  void validate() const {
    if (chip_size == 0 || chip_size % 2 == 0) throw ConfigError("map: chip_size must be odd");
    if (tile_size == 0) throw ConfigError("map: tile_size must be >= 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MapConfig, chip_size, tile_size, mask_fill, tag)

// A cell is masked if any band is masked there.
inline bool cell_masked(const RasterStack& scene, std::size_t row, std::size_t col) {
  for (const auto& g : scene.grids) {
    if (RasterGrid::masked(g.at(row, col))) return true;
  }
  return false;
}

inline std::vector<double> band_fill_values(const RasterStack& scene, MaskFill fill) {
  std::vector<double> out(scene.size(), 0.0);
  if (fill == MaskFill::zero) return out;
  for (std::size_t b = 0; b < scene.size(); ++b) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < scene.grids[b].values.size(); ++i) {
      const std::size_t row = i / scene.front().width, col = i % scene.front().width;
      if (cell_masked(scene, row, col)) continue;
      s += scene.grids[b].values[i];
      ++n;
    }
    out[b] = n > 0 ? s / static_cast<double>(n) : 0.0;
  }
  return out;
}

// Window of `chip_size` cells centred on (row, col). Out-of-scene positions
// are clamped to the nearest edge cell; masked neighbours take `fill`.
inline data::ImageChip extract_chip(const RasterStack& scene, std::size_t row, std::size_t col, std::size_t chip_size,
                                    const std::vector<double>& fill) {
  const auto& g0 = scene.front();
  auto chip = data::ImageChip::blank(chip_size, scene.size(), g0.cell_lon(col), g0.cell_lat(row), g0.cell_size);
  const long half = static_cast<long>(chip_size / 2);
  const long h = static_cast<long>(g0.height), w = static_cast<long>(g0.width);
  for (std::size_t r = 0; r < chip_size; ++r)
    for (std::size_t c = 0; c < chip_size; ++c) {
      const auto sr = static_cast<std::size_t>(std::clamp(static_cast<long>(row) + static_cast<long>(r) - half, 0L, h - 1));
      const auto sc = static_cast<std::size_t>(std::clamp(static_cast<long>(col) + static_cast<long>(c) - half, 0L, w - 1));
      const bool m = cell_masked(scene, sr, sc);
      for (std::size_t b = 0; b < scene.size(); ++b) chip.at(b, r, c) = m ? fill[b] : scene.grids[b].at(sr, sc);
    }
  return chip;
}

namespace detail {

inline void check_scene(const RasterStack& scene, const model::ModelConfig& cfg, const MapConfig& mcfg) {
  mcfg.validate();
  scene.validate("predict_map");
  if (scene.size() != cfg.bands) {
    throw DataError("predict_map: scene has " + std::to_string(scene.size()) + " bands, model expects " + std::to_string(cfg.bands));
  }
  if (mcfg.chip_size != cfg.chip_size) {
    throw ConfigError("predict_map: chip size " + std::to_string(mcfg.chip_size) + " does not match model chip size " + std::to_string(cfg.chip_size));
  }
}

// Calls fn(tile_cells, chips) for each tile, row-major over tiles.
template <class Fn>
void for_each_tile(const RasterStack& scene, const MapConfig& mcfg, Fn&& fn) {
  const auto& g0 = scene.front();
  const auto fill = band_fill_values(scene, mcfg.mask_fill);
  for (std::size_t tr = 0; tr < g0.height; tr += mcfg.tile_size)
    for (std::size_t tc = 0; tc < g0.width; tc += mcfg.tile_size) {
      std::vector<std::size_t> cells;
      std::vector<data::ImageChip> chips;
      for (std::size_t r = tr; r < std::min(g0.height, tr + mcfg.tile_size); ++r)
        for (std::size_t c = tc; c < std::min(g0.width, tc + mcfg.tile_size); ++c) {
          if (cell_masked(scene, r, c)) continue;
          cells.push_back(r * g0.width + c);
          chips.push_back(extract_chip(scene, r, c, mcfg.chip_size, fill));
        }
      if (!chips.empty()) fn(cells, chips);
    }
}

inline RasterGrid masked_like(const RasterGrid& g0, std::string band, std::string tag) {
  RasterGrid out = g0;
  out.values.assign(g0.values.size(), std::numeric_limits<double>::quiet_NaN());
  out.band = std::move(band);
  out.tag = std::move(tag);
  return out;
}

}  // namespace detail

inline RasterGrid predict_map(const model::ModelParams& p, const model::ModelConfig& cfg, const RasterStack& scene, const MapConfig& mcfg) {
  detail::check_scene(scene, cfg, mcfg);
  auto out = detail::masked_like(scene.front(), "richness", mcfg.tag);
  detail::for_each_tile(scene, mcfg, [&](const std::vector<std::size_t>& cells, const std::vector<data::ImageChip>& chips) {
    const auto y = model::predict(p, cfg, chips);
    for (std::size_t i = 0; i < cells.size(); ++i) out.values[cells[i]] = y[i];
  });
  return out;
}

struct UncertaintyMaps {
  RasterGrid deterministic;
  RasterGrid mc_mean;
  RasterGrid epsilon;            // NaN where masked or where the mean is zero
  std::size_t undefined_cells = 0;  // unmasked cells with zero MC mean
};

// Per-cell MC dropout. Each cell uses the same per-repetition streams as
// mc_uncertainty() on that cell's chip alone.
inline UncertaintyMaps uncertainty_map(const model::ModelParams& p, const model::ModelConfig& cfg, const RasterStack& scene,
                                       const uncert::UncertaintyConfig& ucfg, const MapConfig& mcfg) {
  detail::check_scene(scene, cfg, mcfg);
  ucfg.validate();
  UncertaintyMaps out{detail::masked_like(scene.front(), "richness", mcfg.tag), detail::masked_like(scene.front(), "richness_mc", mcfg.tag),
                      detail::masked_like(scene.front(), "epsilon", mcfg.tag), 0};
  detail::for_each_tile(scene, mcfg, [&](const std::vector<std::size_t>& cells, const std::vector<data::ImageChip>& chips) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto e = uncert::mc_uncertainty(p, cfg, chips[i], ucfg);
      out.deterministic.values[cells[i]] = e.deterministic;
      out.mc_mean.values[cells[i]] = e.mean;
      if (e.epsilon_defined) {
        out.epsilon.values[cells[i]] = e.epsilon;
      } else {
        ++out.undefined_cells;
      }
    }
  });
  return out;
}

enum class Stat { mean, std };

inline Stat parse_stat(const std::string& s) {
  if (s == "mean") return Stat::mean;
  if (s == "std") return Stat::std;
  throw ConfigError("aggregate: unknown statistic '" + s + "' (expected mean or std)");
}

// Per-cell statistic across the stack, skipping masked members. A cell with
// no valid member (or fewer than two, for std) is masked.
inline RasterGrid aggregate(const RasterStack& stack, Stat stat) {
  stack.validate("aggregate");
  if (stat == Stat::std && stack.size() < 2) throw ConfigError("aggregate: std needs at least 2 grids");
  auto out = detail::masked_like(stack.front(), stack.front().band, stat == Stat::mean ? "mean" : "std");
  std::vector<double> vals;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    vals.clear();
    for (const auto& g : stack.grids) {
      if (!RasterGrid::masked(g.values[i])) vals.push_back(g.values[i]);
    }
    if (vals.empty()) continue;
    if (stat == Stat::mean) {
      out.values[i] = uncert::detail::compensated_sum(vals) / static_cast<double>(vals.size());
    } else if (vals.size() >= 2) {
      out.values[i] = uncert::mc_statistics(vals).std;
    }
  }
  return out;
}

}  // namespace spatioformer::mapper
