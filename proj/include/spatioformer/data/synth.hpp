#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/data/samples.hpp"
#include "spatioformer/error.hpp"
#include "spatioformer/numerics/rng.hpp"
#include "spatioformer/raster.hpp"

// Synthetic stand-in for plot surveys plus satellite chips. The bbox is cut
// into `regions` equal-width longitude bands; inside band r
//
//   richness = max(0, slope_r * s(chip) + intercept_r + noise)
//
// where s is a fixed spectral statistic of the chip. Region membership is a
// function of location only and is never stored in the samples, so a model
// can recover it only through coordinates.
namespace spatioformer::data {

enum class SpectralSignal {
  center_contrast,       // NIR - red at the centre pixel
  neighborhood_texture,  // NIR std-dev over the centre 3x3, divided by texture_max
};

NLOHMANN_JSON_SERIALIZE_ENUM(SpectralSignal, {{SpectralSignal::center_contrast, "center_contrast"},
                                              {SpectralSignal::neighborhood_texture, "neighborhood_texture"}})

struct SynthConfig {
  BBox bbox{112.0, -44.0, 154.0, -10.0};
  std::size_t regions = 4;
  // Per-region coefficients; when empty, slopes alternate +slope / -slope and
  // every intercept equals `intercept`.
  std::vector<double> slopes;
  std::vector<double> intercepts;
  double slope = 40.0;
  double intercept = 30.0;
  double noise_sd = 3.0;
  SpectralSignal signal = SpectralSignal::center_contrast;
  std::size_t chip_size = 9;
  std::size_t bands = kLandsatBands;
  double reflectance_lo = 0.05;
  double reflectance_hi = 0.5;
  double texture_max = 0.05;  // per-pixel jitter amplitude is U(0, texture_max)
  double pixel_pitch = kPixelPitch30m;
  int year_min = 2015;
  int year_max = 2023;

  void validate() const {
    if (!(bbox.east > bbox.west) || !(bbox.north > bbox.south)) throw ConfigError("synth: invalid bbox");
    if (regions < 2) throw ConfigError("synth: need at least two regions for location dependence");
    if (!slopes.empty() && slopes.size() != regions) throw ConfigError("synth: slopes must list one value per region");
    if (!intercepts.empty() && intercepts.size() != regions) throw ConfigError("synth: intercepts must list one value per region");
    if (chip_size == 0 || chip_size % 2 == 0) throw ConfigError("synth: chip size must be odd");
    if (signal == SpectralSignal::neighborhood_texture && chip_size < 3) throw ConfigError("synth: texture signal needs chips >= 3x3");
    if (bands <= kNirBand) throw ConfigError("synth: need at least red and NIR bands");
    if (!(reflectance_lo >= texture_max && reflectance_hi + texture_max <= 1.0 && reflectance_lo < reflectance_hi)) {
      throw ConfigError("synth: reflectance range plus texture must stay inside [0,1]");
    }
    if (!(noise_sd >= 0.0)) throw ConfigError("synth: noise_sd must be >= 0");
    if (year_min > year_max) throw ConfigError("synth: empty year range");
  }

  double slope_of(std::size_t r) const { return slopes.empty() ? (r % 2 == 0 ? slope : -slope) : slopes[r]; }
  double intercept_of(std::size_t r) const { return intercepts.empty() ? intercept : intercepts[r]; }

  std::size_t region_of(double lon, double /*lat*/) const {
    const double w = (bbox.east - bbox.west) / static_cast<double>(regions);
    const auto r = static_cast<long long>(std::floor((lon - bbox.west) / w));
    return static_cast<std::size_t>(std::clamp<long long>(r, 0, static_cast<long long>(regions) - 1));
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, bbox, regions, slopes, intercepts, slope, intercept, noise_sd, signal,
                                                chip_size, bands, reflectance_lo, reflectance_hi, texture_max, pixel_pitch, year_min,
                                                year_max)

inline double spectral_signal(const SynthConfig& cfg, const ImageChip& chip) {
  const std::size_t h = chip.half();
  if (cfg.signal == SpectralSignal::center_contrast) return chip.at(kNirBand, h, h) - chip.at(kRedBand, h, h);
  if (chip.size < 3) throw ConfigError("texture signal needs a chip of at least 3x3");
  double mean = 0.0;
  for (std::size_t r = h - 1; r <= h + 1; ++r)
    for (std::size_t c = h - 1; c <= h + 1; ++c) mean += chip.at(kNirBand, r, c);
  mean /= 9.0;
  double var = 0.0;
  for (std::size_t r = h - 1; r <= h + 1; ++r)
    for (std::size_t c = h - 1; c <= h + 1; ++c) var += (chip.at(kNirBand, r, c) - mean) * (chip.at(kNirBand, r, c) - mean);
  return std::sqrt(var / 9.0) / cfg.texture_max;
}

// Location-aware noiseless predictor: the conditional mean given region and chip.
inline double oracle_predict(const SynthConfig& cfg, double lon, double lat, const ImageChip& chip) {
  const auto r = cfg.region_of(lon, lat);
  return std::max(0.0, cfg.slope_of(r) * spectral_signal(cfg, chip) + cfg.intercept_of(r));
}

// Region probabilities under uniform sampling of the bbox (equal-width bands).
inline double region_probability(const SynthConfig& cfg, std::size_t /*r*/) { return 1.0 / static_cast<double>(cfg.regions); }

// Best predictor that sees the chip but not the location: E_r[slope_r] s + E_r[intercept_r].
inline double geo_blind_predict(const SynthConfig& cfg, const ImageChip& chip) {
  const double s = spectral_signal(cfg, chip);
  double mb = 0.0, mg = 0.0;
  for (std::size_t r = 0; r < cfg.regions; ++r) {
    mb += region_probability(cfg, r) * cfg.slope_of(r);
    mg += region_probability(cfg, r) * cfg.intercept_of(r);
  }
  return mb * s + mg;
}

// Closed-form minimum expected squared error of any location-blind predictor
// for the centre-contrast signal:
//   noise^2 + Var_r(slope) E[s^2] + 2 Cov_r(slope, intercept) E[s] + Var_r(intercept)
// with s = (b_nir + t u1) - (b_red + t u2), b ~ U(lo, hi), t ~ U(0, T),
// u ~ U(-1, 1), so E[s] = 0 and E[s^2] = (hi - lo)^2 / 6 + 2 T^2 / 9.
// The clamp at zero richness is ignored; configurations where it binds with
// non-negligible probability make this an approximation.
inline double geo_blind_bayes_risk(const SynthConfig& cfg) {
  if (cfg.signal != SpectralSignal::center_contrast) throw ConfigError("closed-form Bayes risk is defined for the centre-contrast signal only");
  const double span = cfg.reflectance_hi - cfg.reflectance_lo;
  const double es = 0.0;
  const double es2 = span * span / 6.0 + 2.0 * cfg.texture_max * cfg.texture_max / 9.0;
  double mb = 0.0, mg = 0.0;
  for (std::size_t r = 0; r < cfg.regions; ++r) {
    mb += region_probability(cfg, r) * cfg.slope_of(r);
    mg += region_probability(cfg, r) * cfg.intercept_of(r);
  }
  double vb = 0.0, vg = 0.0, cbg = 0.0;
  for (std::size_t r = 0; r < cfg.regions; ++r) {
    const double p = region_probability(cfg, r);
    vb += p * (cfg.slope_of(r) - mb) * (cfg.slope_of(r) - mb);
    vg += p * (cfg.intercept_of(r) - mg) * (cfg.intercept_of(r) - mg);
    cbg += p * (cfg.slope_of(r) - mb) * (cfg.intercept_of(r) - mg);
  }
  return cfg.noise_sd * cfg.noise_sd + vb * es2 + 2.0 * cbg * es + vg;
}

inline ImageChip synth_chip(const SynthConfig& cfg, double lon, double lat, numerics::RngStream& rng) {
  auto chip = ImageChip::blank(cfg.chip_size, cfg.bands, lon, lat, cfg.pixel_pitch);
  const double texture = rng.uniform(0.0, cfg.texture_max);
  for (std::size_t b = 0; b < cfg.bands; ++b) {
    const double base = rng.uniform(cfg.reflectance_lo, cfg.reflectance_hi);
    for (std::size_t r = 0; r < cfg.chip_size; ++r)
      for (std::size_t c = 0; c < cfg.chip_size; ++c) chip.at(b, r, c) = base + texture * rng.uniform(-1.0, 1.0);
  }
  return chip;
}

inline std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", i);
  return buf;
}

inline Dataset synth_generate(const SynthConfig& cfg, std::size_t n, numerics::RngStream& rng) {
  cfg.validate();
  if (n == 0) throw ConfigError("synth: n must be >= 1");
  Dataset d;
  d.samples.reserve(n);
  d.chips.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord s;
    s.id = sample_id(i);
    s.lon = rng.uniform(cfg.bbox.west, cfg.bbox.east);
    s.lat = rng.uniform(cfg.bbox.south, cfg.bbox.north);
    s.year = cfg.year_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.year_max - cfg.year_min + 1)));
    auto chip = synth_chip(cfg, s.lon, s.lat, rng);
    const double noise = cfg.noise_sd > 0.0 ? rng.normal(0.0, cfg.noise_sd) : 0.0;
    const auto r = cfg.region_of(s.lon, s.lat);
    s.richness = std::max(0.0, cfg.slope_of(r) * spectral_signal(cfg, chip) + cfg.intercept_of(r) + noise);
    s.chip_path = "chips/" + s.id + ".chip";
    d.samples.push_back(std::move(s));
    d.chips.push_back(std::move(chip));
  }
  return d;
}

// Six-band scene of uniform per-band reflectance with optional per-cell
// texture, for mapping demos and tests.
inline std::vector<RasterGrid> synth_scene(const BBox& bbox, double cell, std::size_t bands, numerics::RngStream& rng, double texture = 0.0,
                                           double lo = 0.05, double hi = 0.5) {
  std::vector<RasterGrid> scene;
  for (std::size_t b = 0; b < bands; ++b) {
    auto g = RasterGrid::make(bbox, cell, "band" + std::to_string(b + 1), "scene", rng.uniform(lo, hi));
    if (texture > 0.0) {
      for (auto& v : g.values) v = std::clamp(v + texture * rng.uniform(-1.0, 1.0), 0.0, 1.0);
    }
    scene.push_back(std::move(g));
  }
  return scene;
}

}  // namespace spatioformer::data
