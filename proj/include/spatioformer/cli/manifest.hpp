#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "spatioformer/error.hpp"
#include "spatioformer/numerics/checkpoint.hpp"

namespace spatioformer::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kCheckpointFormat = 1;
inline constexpr int kRasterFormat = 1;

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error(ErrorCategory::data, "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

inline std::string file_sha256(const std::filesystem::path& p) { return sha256_hex(numerics::read_file_bytes(p)); }

// UTC ISO-8601; honours SOURCE_DATE_EPOCH so manifests can be reproduced too.
inline std::string utc_timestamp() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::vector<std::string> outputs;           // relative to the output directory
  std::string started;

  std::string config_hash() const { return sha256_hex(config.dump()); }

  void add_input(const std::filesystem::path& p) { inputs[p.string()] = file_sha256(p); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = config_hash();
    j["seed"] = seed;
    j["versions"] = {{"spatioformer", kVersion}, {"checkpoint_format", kCheckpointFormat}, {"raster_format", kRasterFormat}};
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started"] = started;
    j["finished"] = utc_timestamp();
    return j;
  }
};

// Collects every file a command writes, confined to one directory.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw DataError("cannot create output directory " + root_.string() + ": " + ec.message());
  }

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path path(const std::string& rel) {
    const auto p = (root_ / rel).lexically_normal();
    const auto back = p.lexically_relative(root_.lexically_normal());
    if (back.empty() || *back.begin() == "..") throw ConfigError("refusing to write outside --out: " + rel);
    std::filesystem::create_directories(p.parent_path());
    if (std::find(written_.begin(), written_.end(), rel) == written_.end()) written_.push_back(rel);
    return p;
  }

  void write(const std::string& rel, std::string_view bytes) { numerics::write_file_bytes(path(rel), bytes); }

  void finish(RunManifest m) {
    m.outputs = written_;
    numerics::write_file_bytes(root_ / "manifest.json", m.to_json().dump(2) + "\n");
  }

 private:
  std::filesystem::path root_;
  std::vector<std::string> written_;
};

}  // namespace spatioformer::cli
