#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/data/samples.hpp"
#include "spatioformer/error.hpp"
#include "spatioformer/format.hpp"
#include "spatioformer/numerics/rng.hpp"

// Block-based train/val/test partition: whole tiles, not samples, are
// assigned to splits so that held-out data is spatially separated.
namespace spatioformer::data {

struct TileIndex {
  long long i = 0;  // column, along longitude
  long long j = 0;  // row, along latitude
  auto operator<=>(const TileIndex&) const = default;
};

// Fixed-degree tiling standing in for a 100 km x 100 km grid. Every
// coordinate maps to exactly one half-open tile.
struct TileGrid {
  double origin_lon = 112.0;
  double origin_lat = -44.0;
  double tile_lon = 1.0;
  double tile_lat = 0.9;

  void validate() const {
    if (!(tile_lon > 0.0) || !(tile_lat > 0.0)) throw ConfigError("tile grid: tile extents must be positive");
  }

  TileIndex tile_of(double lon, double lat) const {
    return {static_cast<long long>(std::floor((lon - origin_lon) / tile_lon)),
            static_cast<long long>(std::floor((lat - origin_lat) / tile_lat))};
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TileGrid, origin_lon, origin_lat, tile_lon, tile_lat)

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

struct SplitAssignment {
  TileGrid grid;
  std::map<TileIndex, Split> tiles;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;

  Split split_of(const SampleRecord& s) const {
    const auto it = tiles.find(grid.tile_of(s.lon, s.lat));
    if (it == tiles.end()) throw DataError("sample " + s.id + " falls in an unassigned tile");
    return it->second;
  }

  std::array<std::size_t, 3> tile_counts() const {
    std::array<std::size_t, 3> n{};
    for (const auto& [t, s] : tiles) ++n[static_cast<std::size_t>(s)];
    return n;
  }

  std::vector<std::size_t> indices(const std::vector<SampleRecord>& samples, Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (split_of(samples[i]) == which) out.push_back(i);
    }
    return out;
  }
};

// Shuffles the non-empty tiles with `seed` and cuts them by fractions,
// rounding train and val tile counts to nearest; test takes the remainder.
inline SplitAssignment split_by_tiles(const std::vector<SampleRecord>& samples, const TileGrid& grid,
                                      std::array<double, 3> fractions, std::uint64_t seed) {
  grid.validate();
  if (samples.empty()) throw DataError("split_by_tiles: empty sample set");
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split_by_tiles: negative fraction");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) throw ConfigError("split_by_tiles: fractions must sum to 1");

  std::set<TileIndex> occupied;
  for (const auto& s : samples) occupied.insert(grid.tile_of(s.lon, s.lat));
  std::vector<TileIndex> order(occupied.begin(), occupied.end());
  numerics::RngStream rng(seed, 0x5eed);
  rng.shuffle(std::span<TileIndex>(order));

  const double n = static_cast<double>(order.size());
  auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
  n_train = std::min(n_train, order.size());
  n_val = std::min(n_val, order.size() - n_train);

  SplitAssignment out;
  out.grid = grid;
  out.fractions = fractions;
  out.seed = seed;
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.tiles[order[k]] = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
  }
  const auto counts = out.tile_counts();
  for (std::size_t s = 0; s < 3; ++s) {
    if (counts[s] == 0) out.warnings.push_back(std::string(split_name(static_cast<Split>(s))) + " split is empty");
  }
  return out;
}

// Fails hard if any tile contributes samples to more than one of the given
// sets, or a sample id appears twice across them.
inline void check_no_leakage(const std::vector<const std::vector<SampleRecord>*>& sets, const TileGrid& grid) {
  std::map<TileIndex, std::size_t> owner;
  std::map<std::string, std::size_t> ids;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    for (const auto& s : *sets[k]) {
      const auto t = grid.tile_of(s.lon, s.lat);
      const auto [it, fresh] = owner.emplace(t, k);
      if (!fresh && it->second != k) {
        throw DataError("leakage: tile (" + std::to_string(t.i) + "," + std::to_string(t.j) + ") contributes samples to sets " +
                        std::to_string(it->second) + " and " + std::to_string(k));
      }
      const auto [jt, new_id] = ids.emplace(s.id, k);
      if (!new_id && jt->second != k) throw DataError("leakage: sample " + s.id + " appears in two sets");
    }
  }
}

// split CSV: id,tile_i,tile_j,split
inline std::string split_to_csv(const std::vector<SampleRecord>& samples, const SplitAssignment& a) {
  std::string out = "id,tile_i,tile_j,split\n";
  for (const auto& s : samples) {
    const auto t = a.grid.tile_of(s.lon, s.lat);
    out += s.id + "," + std::to_string(t.i) + "," + std::to_string(t.j) + "," + split_name(a.split_of(s)) + "\n";
  }
  return out;
}

inline nlohmann::json split_to_json(const SplitAssignment& a) {
  nlohmann::json j;
  j["grid"] = a.grid;
  j["fractions"] = a.fractions;
  j["seed"] = a.seed;
  j["tiles"] = nlohmann::json::array();
  for (const auto& [t, s] : a.tiles) j["tiles"].push_back({t.i, t.j, split_name(s)});
  j["warnings"] = a.warnings;
  return j;
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment a;
  try {
    a.grid = j.at("grid").get<TileGrid>();
    a.fractions = j.at("fractions").get<std::array<double, 3>>();
    a.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& t : j.at("tiles")) {
      a.tiles[{t.at(0).get<long long>(), t.at(1).get<long long>()}] = parse_split(t.at(2).get<std::string>());
    }
    a.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("split json: ") + e.what());
  }
  return a;
}

}  // namespace spatioformer::data
