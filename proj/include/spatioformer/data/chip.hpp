#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spatioformer/error.hpp"
#include "spatioformer/numerics/checkpoint.hpp"

namespace spatioformer::data {

// 30 m expressed in degrees of latitude.
inline constexpr double kPixelPitch30m = 30.0 / 111320.0;
inline constexpr std::size_t kLandsatBands = 6;  // blue, green, red, NIR, SWIR1, SWIR2
inline constexpr std::size_t kRedBand = 2;
inline constexpr std::size_t kNirBand = 3;

// size x size x bands reflectance window whose centre pixel sits on the
// sample location. Stored band-major: reflectance[(b * size + row) * size + col].
// Row 0 is the northern edge.
struct ImageChip {
  std::size_t size = 0;
  std::size_t bands = kLandsatBands;
  std::vector<double> reflectance;
  double center_lon = 0.0;
  double center_lat = 0.0;
  double pixel_pitch = kPixelPitch30m;

  static ImageChip blank(std::size_t size, std::size_t bands, double lon, double lat, double pitch = kPixelPitch30m) {
    ImageChip c;
    c.size = size;
    c.bands = bands;
    c.reflectance.assign(size * size * bands, 0.0);
    c.center_lon = lon;
    c.center_lat = lat;
    c.pixel_pitch = pitch;
    return c;
  }

  double& at(std::size_t band, std::size_t row, std::size_t col) { return reflectance[(band * size + row) * size + col]; }
  double at(std::size_t band, std::size_t row, std::size_t col) const { return reflectance[(band * size + row) * size + col]; }

  std::size_t pixels() const { return size * size; }
  std::size_t half() const { return size / 2; }
  double pixel_lon(std::size_t col) const {
    return center_lon + (static_cast<double>(col) - static_cast<double>(half())) * pixel_pitch;
  }
  double pixel_lat(std::size_t row) const {
    return center_lat - (static_cast<double>(row) - static_cast<double>(half())) * pixel_pitch;
  }

  void validate() const {
    if (size == 0 || size % 2 == 0) throw DataError("chip: size must be odd and positive, got " + std::to_string(size));
    if (bands == 0) throw DataError("chip: zero bands");
    if (reflectance.size() != size * size * bands) throw DataError("chip: reflectance length does not match size*size*bands");
    if (!std::isfinite(center_lon) || !std::isfinite(center_lat)) throw DataError("chip: non-finite centre coordinate");
    if (!(pixel_pitch > 0.0) || !std::isfinite(pixel_pitch)) throw DataError("chip: pixel pitch must be positive");
    for (std::size_t i = 0; i < reflectance.size(); ++i) {
      const double v = reflectance[i];
      if (std::isnan(v)) throw DataError("chip: NaN reflectance at element " + std::to_string(i));
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("chip: reflectance " + std::to_string(v) + " outside [0,1] at element " + std::to_string(i));
    }
  }

  // Centred crop to an odd size no larger than this chip.
  ImageChip center_crop(std::size_t new_size) const {
    if (new_size == 0 || new_size % 2 == 0 || new_size > size) {
      throw ConfigError("chip: cannot crop " + std::to_string(size) + " to " + std::to_string(new_size));
    }
    const std::size_t off = (size - new_size) / 2;
    ImageChip c = blank(new_size, bands, center_lon, center_lat, pixel_pitch);
    for (std::size_t b = 0; b < bands; ++b)
      for (std::size_t r = 0; r < new_size; ++r)
        for (std::size_t col = 0; col < new_size; ++col) c.at(b, r, col) = at(b, r + off, col + off);
    return c;
  }
};

inline constexpr std::string_view kChipMagic = "CHIP0001";

// "CHIP0001" | i64 size | i64 bands | f64 center_lon | f64 center_lat |
// f64 pixel_pitch | band-major f64 payload. All little-endian.
inline std::string encode_chip(const ImageChip& chip) {
  chip.validate();
  std::string out(kChipMagic);
  auto put = [&](const auto& v) { out.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put(static_cast<std::int64_t>(chip.size));
  put(static_cast<std::int64_t>(chip.bands));
  put(chip.center_lon);
  put(chip.center_lat);
  put(chip.pixel_pitch);
  out.append(reinterpret_cast<const char*>(chip.reflectance.data()), chip.reflectance.size() * sizeof(double));
  return out;
}

inline ImageChip decode_chip(std::string_view bytes) {
  constexpr std::size_t header = 8 + 5 * 8;
  if (bytes.size() < 8 || bytes.substr(0, 8) != kChipMagic) throw DataError("chip: bad magic at byte offset 0 (expected CHIP0001)");
  if (bytes.size() < header) throw DataError("chip: truncated header at byte offset " + std::to_string(bytes.size()));
  auto get = [&](auto& v, std::size_t off) { std::memcpy(&v, bytes.data() + off, sizeof(v)); };
  std::int64_t size = 0, bands = 0;
  ImageChip c;
  get(size, 8);
  get(bands, 16);
  get(c.center_lon, 24);
  get(c.center_lat, 32);
  get(c.pixel_pitch, 40);
  if (size <= 0 || size > 4096) throw DataError("chip: implausible size " + std::to_string(size) + " at byte offset 8");
  if (bands <= 0 || bands > 64) throw DataError("chip: implausible band count " + std::to_string(bands) + " at byte offset 16");
  c.size = static_cast<std::size_t>(size);
  c.bands = static_cast<std::size_t>(bands);
  const std::size_t n = c.size * c.size * c.bands;
  if (bytes.size() < header + n * 8) {
    throw DataError("chip: truncated payload at byte offset " + std::to_string(bytes.size()) + ", expected " +
                    std::to_string(header + n * 8) + " bytes");
  }
  if (bytes.size() > header + n * 8) throw DataError("chip: trailing bytes after payload at byte offset " + std::to_string(header + n * 8));
  c.reflectance.resize(n);
  std::memcpy(c.reflectance.data(), bytes.data() + header, n * 8);
  c.validate();
  return c;
}

inline void write_chip(const ImageChip& chip, const std::filesystem::path& path) { numerics::write_file_bytes(path, encode_chip(chip)); }

inline ImageChip read_chip(const std::filesystem::path& path) {
  try {
    return decode_chip(numerics::read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace spatioformer::data
