#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "spatioformer/error.hpp"
#include "spatioformer/raster.hpp"

// Multi-scale sinusoidal geolocation encoder.
//
// For a coordinate (lon, lat) in degrees the token has d elements, indexed
// j = 1..d:
//
//   g_j = sin(lon / w_j) + sin(lat / v_j)   j even
//   g_j = cos(lon / w_j) + cos(lat / v_j)   j odd
//
// with w_j = a * c^(j/d) and v_j = a * c^((d-j)/d). Low j varies fastest
// along longitude, high j along latitude. The trig arguments are plain
// radians of coordinate/wavelength.
namespace spatioformer::geo {

struct GeoEncoderConfig {
  std::size_t d = 16;
  double a = 1.0;
  double c = 100.0;
  // Optional affine pre-transform applied to coordinates before encoding.
  double lon_scale = 1.0;
  double lon_offset = 0.0;
  double lat_scale = 1.0;
  double lat_offset = 0.0;

  void validate() const {
    if (d < 2 || d % 2 != 0) throw ConfigError("geo encoder: d must be even and >= 2, got " + std::to_string(d));
    if (!(a > 0.0)) throw ConfigError("geo encoder: a must be positive");
    if (!(c > 1.0)) throw ConfigError("geo encoder: c must exceed 1");
    if (!std::isfinite(lon_scale) || !std::isfinite(lat_scale) || !std::isfinite(lon_offset) || !std::isfinite(lat_offset)) {
      throw ConfigError("geo encoder: non-finite pre-transform");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeoEncoderConfig, d, a, c, lon_scale, lon_offset, lat_scale, lat_offset)

using GeoToken = std::vector<double>;

// Longitude wavelength of layer j (1-based).
inline double lon_wavelength(const GeoEncoderConfig& cfg, std::size_t j) {
  return cfg.a * std::pow(cfg.c, static_cast<double>(j) / static_cast<double>(cfg.d));
}

// Latitude wavelength of layer j (1-based).
inline double lat_wavelength(const GeoEncoderConfig& cfg, std::size_t j) {
  return cfg.a * std::pow(cfg.c, static_cast<double>(cfg.d - j) / static_cast<double>(cfg.d));
}

inline double encode_layer(const GeoEncoderConfig& cfg, std::size_t j, double lon, double lat) {
  const double x = cfg.lon_scale * lon + cfg.lon_offset;
  const double y = cfg.lat_scale * lat + cfg.lat_offset;
  const double u = x / lon_wavelength(cfg, j);
  const double v = y / lat_wavelength(cfg, j);
  return j % 2 == 0 ? std::sin(u) + std::sin(v) : std::cos(u) + std::cos(v);
}

inline void encode_into(const GeoEncoderConfig& cfg, double lon, double lat, std::span<double> out) {
  if (!std::isfinite(lon) || !std::isfinite(lat)) throw DataError("geo encoder: non-finite coordinate");
  if (out.size() != cfg.d) throw ConfigError("geo encoder: output span does not have d elements");
  for (std::size_t j = 1; j <= cfg.d; ++j) out[j - 1] = encode_layer(cfg, j, lon, lat);
}

inline GeoToken encode(const GeoEncoderConfig& cfg, double lon, double lat) {
  cfg.validate();
  GeoToken t(cfg.d);
  encode_into(cfg, lon, lat, t);
  return t;
}

// Samples layer j on the cell centres of a grid covering bbox.
inline RasterGrid render_layer(const GeoEncoderConfig& cfg, std::size_t j, const BBox& bbox, double resolution) {
  cfg.validate();
  if (j < 1 || j > cfg.d) throw ConfigError("render_layer: layer " + std::to_string(j) + " outside 1.." + std::to_string(cfg.d));
  auto grid = RasterGrid::make(bbox, resolution, "g" + std::to_string(j), "geo-encoding");
  for (std::size_t r = 0; r < grid.height; ++r) {
    for (std::size_t col = 0; col < grid.width; ++col) grid.at(r, col) = encode_layer(cfg, j, grid.cell_lon(col), grid.cell_lat(r));
  }
  return grid;
}

struct GeoPoint {
  double lon = 0.0;
  double lat = 0.0;
};

// Minimum Euclidean distance between the tokens of any two points. Pairs
// whose coordinates lie closer than min_separation degrees are skipped; the
// result is +inf when no pair qualifies.
inline double distinctiveness(const GeoEncoderConfig& cfg, std::span<const GeoPoint> points, double min_separation = 0.0) {
  if (points.size() < 2) throw ConfigError("distinctiveness: need at least two points");
  std::vector<GeoToken> tokens;
  tokens.reserve(points.size());
  for (const auto& p : points) tokens.push_back(encode(cfg, p.lon, p.lat));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t k = i + 1; k < points.size(); ++k) {
      if (std::hypot(points[i].lon - points[k].lon, points[i].lat - points[k].lat) < min_separation) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.d; ++j) {
        const double diff = tokens[i][j] - tokens[k][j];
        s += diff * diff;
      }
      best = std::min(best, std::sqrt(s));
    }
  }
  return best;
}

}  // namespace spatioformer::geo
