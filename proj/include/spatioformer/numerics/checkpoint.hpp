#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "spatioformer/numerics/tensor.hpp"

// Parameter checkpoint file:
//   "SPFORM01" | u64 LE manifest length | UTF-8 JSON manifest | payload
// The manifest lists {name, shape, offset} per tensor, offsets in bytes from
// the start of the payload; the payload is little-endian IEEE-754 doubles.
namespace spatioformer::numerics {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::string_view kCheckpointMagic = "SPFORM01";

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline std::uint64_t get_u64(std::string_view in, std::size_t offset) {
  std::uint64_t v;
  std::memcpy(&v, in.data() + offset, 8);
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : tensors) {
    manifest["tensors"].push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}, {"offset", offset}});
    offset += nt.tensor.size() * sizeof(double);
  }
  manifest["extra"] = extra;
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic);
  detail::put_u64(out, text.size());
  out += text;
  for (const auto& nt : tensors) {
    const auto v = nt.tensor.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return out;
}

struct DecodedCheckpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json extra;
};

inline DecodedCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic at byte offset 0 (expected SPFORM01)");
  }
  const std::uint64_t len = detail::get_u64(bytes, 8);
  if (len > bytes.size() - 16) throw DataError("checkpoint: manifest length overruns file at byte offset 8");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed manifest at byte offset 16: ") + e.what());
  }
  const std::size_t payload = 16 + len;
  DecodedCheckpoint out;
  out.extra = manifest.value("extra", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_size(shape);
    if (payload + offset + n * sizeof(double) > bytes.size()) {
      throw DataError("checkpoint: tensor '" + name + "' truncated at byte offset " + std::to_string(payload + offset));
    }
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes.data() + payload + offset, n * sizeof(double));
    out.tensors.push_back({name, Tensor(shape, std::move(values))});
  }
  return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace spatioformer::numerics
