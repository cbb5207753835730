#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "spatioformer/error.hpp"
#include "spatioformer/numerics/checkpoint.hpp"

namespace spatioformer {

struct BBox {
  double west = 0.0;
  double south = 0.0;
  double east = 0.0;
  double north = 0.0;

  bool operator==(const BBox&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BBox, west, south, east, north)

// Georeferenced north-up grid. Row 0 is the northern edge; NaN marks a
// masked cell.
struct RasterGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  BBox bbox;
  double cell_size = 0.0;  // degrees, square cells
  std::vector<double> values;
  std::string band;
  std::string tag;  // year or aggregate label

  static RasterGrid make(BBox bbox, double cell_size, std::string band = {}, std::string tag = {}, double fill = 0.0) {
    if (!(cell_size > 0.0) || !(bbox.east > bbox.west) || !(bbox.north > bbox.south)) {
      throw ConfigError("raster: degenerate bbox or cell size");
    }
    RasterGrid g;
    g.bbox = bbox;
    g.cell_size = cell_size;
    g.width = static_cast<std::size_t>(std::llround((bbox.east - bbox.west) / cell_size));
    g.height = static_cast<std::size_t>(std::llround((bbox.north - bbox.south) / cell_size));
    if (g.width == 0 || g.height == 0) throw ConfigError("raster: bbox smaller than one cell");
    g.values.assign(g.width * g.height, fill);
    g.band = std::move(band);
    g.tag = std::move(tag);
    return g;
  }

  double& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
  static bool masked(double v) { return std::isnan(v); }

  double cell_lon(std::size_t col) const { return bbox.west + (static_cast<double>(col) + 0.5) * cell_size; }
  double cell_lat(std::size_t row) const { return bbox.north - (static_cast<double>(row) + 0.5) * cell_size; }

  bool same_geometry(const RasterGrid& o) const {
    return width == o.width && height == o.height && bbox == o.bbox && cell_size == o.cell_size;
  }

  void validate() const {
    if (width * height != values.size()) throw DataError("raster: value count does not match width*height");
    const double half = 0.5 * cell_size;
    if (std::abs(bbox.west + static_cast<double>(width) * cell_size - bbox.east) > half ||
        std::abs(bbox.south + static_cast<double>(height) * cell_size - bbox.north) > half) {
      throw DataError("raster: bbox inconsistent with cell size");
    }
  }
};

inline constexpr std::string_view kRasterMagic = "RAST0001";

// "RAST0001" | u64 LE header length | JSON header | LE doubles, row-major.
inline std::string encode_raster(const RasterGrid& g) {
  g.validate();
  nlohmann::json h = {{"width", g.width},
                      {"height", g.height},
                      {"bbox", {g.bbox.west, g.bbox.south, g.bbox.east, g.bbox.north}},
                      {"cell_size", g.cell_size},
                      {"band", g.band},
                      {"tag", g.tag}};
  const std::string text = h.dump();
  std::string out(kRasterMagic);
  numerics::detail::put_u64(out, text.size());
  out += text;
  out.append(reinterpret_cast<const char*>(g.values.data()), g.values.size() * sizeof(double));
  return out;
}

inline RasterGrid decode_raster(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kRasterMagic) throw DataError("raster: bad magic at byte offset 0 (expected RAST0001)");
  const std::uint64_t len = numerics::detail::get_u64(bytes, 8);
  if (len > bytes.size() - 16) throw DataError("raster: header length overruns file at byte offset 8");
  RasterGrid g;
  try {
    const auto h = nlohmann::json::parse(bytes.substr(16, len));
    g.width = h.at("width").get<std::size_t>();
    g.height = h.at("height").get<std::size_t>();
    const auto b = h.at("bbox").get<std::vector<double>>();
    if (b.size() != 4) throw DataError("raster: bbox must have 4 entries");
    g.bbox = {b[0], b[1], b[2], b[3]};
    g.cell_size = h.at("cell_size").get<double>();
    g.band = h.value("band", "");
    g.tag = h.value("tag", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("raster: malformed header at byte offset 16: ") + e.what());
  }
  const std::size_t n = g.width * g.height;
  const std::size_t payload = 16 + len;
  if (bytes.size() - payload != n * sizeof(double)) {
    throw DataError("raster: payload at byte offset " + std::to_string(payload) + " has " + std::to_string(bytes.size() - payload) +
                    " bytes, expected " + std::to_string(n * sizeof(double)));
  }
  g.values.resize(n);
  std::memcpy(g.values.data(), bytes.data() + payload, n * sizeof(double));
  g.validate();
  return g;
}

inline void write_raster(const RasterGrid& g, const std::filesystem::path& path) { numerics::write_file_bytes(path, encode_raster(g)); }
inline RasterGrid read_raster(const std::filesystem::path& path) { return decode_raster(numerics::read_file_bytes(path)); }

}  // namespace spatioformer
