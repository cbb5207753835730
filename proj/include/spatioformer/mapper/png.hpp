#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "spatioformer/error.hpp"
#include "spatioformer/numerics/checkpoint.hpp"
#include "spatioformer/raster.hpp"

// 8-bit RGB PNG rendering for quick looks at rasters.
namespace spatioformer::mapper {

namespace detail {

inline std::array<std::uint8_t, 3> ramp(double t) {
  static constexpr std::array<std::array<double, 3>, 4> stops{{{68, 1, 84}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * 3.0;
  const auto i = std::min<std::size_t>(2, static_cast<std::size_t>(t));
  const double f = t - static_cast<double>(i);
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<std::uint8_t>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  return rgb;
}

inline void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Values are stretched linearly over [lo, hi] (the raster's own range when
// lo >= hi); masked cells are drawn white.
inline std::string encode_png(const RasterGrid& g, double lo = 0.0, double hi = 0.0) {
  if (lo >= hi) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (double v : g.values) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!(hi > lo)) hi = lo + 1.0;
  }
  std::string raw;
  raw.reserve(g.height * 3 * g.width);
  for (std::size_t r = 0; r < g.height; ++r) {
    for (std::size_t c = 0; c < g.width; ++c) {
      const double v = g.at(r, c);
      const auto rgb = std::isfinite(v) ? detail::ramp((v - lo) / (hi - lo)) : std::array<std::uint8_t, 3>{255, 255, 255};
      for (auto x : rgb) raw.push_back(static_cast<char>(x));
    }
  }
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, detail::png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png: cannot create writer");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: encoding failed");
  }
  png_set_write_fn(png, &out, detail::append_bytes, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(g.width), static_cast<png_uint_32>(g.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < g.height; ++r) png_write_row(png, reinterpret_cast<png_const_bytep>(raw.data() + r * 3 * g.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void write_png(const RasterGrid& g, const std::filesystem::path& path, double lo = 0.0, double hi = 0.0) {
  numerics::write_file_bytes(path, encode_png(g, lo, hi));
}

}  // namespace spatioformer::mapper
