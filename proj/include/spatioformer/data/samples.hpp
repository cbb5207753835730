#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spatioformer/data/chip.hpp"
#include "spatioformer/error.hpp"
#include "spatioformer/format.hpp"

namespace spatioformer::data {

// One ground-truth plot. Richness is species per 400 m2, kept as a float.
struct SampleRecord {
  std::string id;
  double lon = 0.0;
  double lat = 0.0;
  int year = 2020;
  double richness = 0.0;
  std::string chip_path;

  void validate(int year_min = 1900, int year_max = 2100) const {
    if (id.empty()) throw DataError("sample: empty id");
    if (!std::isfinite(lon) || !std::isfinite(lat)) throw DataError("sample " + id + ": non-finite coordinates");
    if (!(richness >= 0.0) || !std::isfinite(richness)) throw DataError("sample " + id + ": richness must be finite and >= 0");
    if (year < year_min || year > year_max) throw DataError("sample " + id + ": year " + std::to_string(year) + " out of range");
  }
};

// Samples paired with their chips, index-aligned.
struct Dataset {
  std::vector<SampleRecord> samples;
  std::vector<ImageChip> chips;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset d;
    for (auto i : indices) {
      d.samples.push_back(samples.at(i));
      d.chips.push_back(chips.at(i));
    }
    return d;
  }

  Dataset cropped(std::size_t chip_size) const {
    Dataset d;
    d.samples = samples;
    for (const auto& c : chips) d.chips.push_back(c.size == chip_size ? c : c.center_crop(chip_size));
    return d;
  }

  std::vector<double> targets() const {
    std::vector<double> t;
    t.reserve(samples.size());
    for (const auto& s : samples) t.push_back(s.richness);
    return t;
  }
};

inline constexpr const char* kSampleCsvHeader = "id,lon,lat,year,richness,chip_path";

inline std::string samples_to_csv(const std::vector<SampleRecord>& samples) {
  std::string out = std::string(kSampleCsvHeader) + "\n";
  for (const auto& s : samples) {
    out += s.id + "," + format_double(s.lon) + "," + format_double(s.lat) + "," + std::to_string(s.year) + "," +
           format_double(s.richness) + "," + s.chip_path + "\n";
  }
  return out;
}

inline std::vector<SampleRecord> samples_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("sample csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSampleCsvHeader) throw DataError("sample csv: unexpected header '" + line + "'");
  std::vector<SampleRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError("sample csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    SampleRecord s;
    s.id = f[0];
    s.lon = parse_double(f[1], "lon");
    s.lat = parse_double(f[2], "lat");
    s.year = static_cast<int>(parse_int(f[3], "year"));
    s.richness = parse_double(f[4], "richness");
    s.chip_path = f[5];
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_samples_csv(const std::vector<SampleRecord>& samples, const std::filesystem::path& path) {
  numerics::write_file_bytes(path, samples_to_csv(samples));
}

inline std::vector<SampleRecord> read_samples_csv(const std::filesystem::path& path) {
  return samples_from_csv(numerics::read_file_bytes(path));
}

// Loads a sample CSV and every referenced chip; chip paths resolve relative
// to the CSV's directory.
inline Dataset load_dataset(const std::filesystem::path& csv) {
  Dataset d;
  d.samples = read_samples_csv(csv);
  const auto base = csv.parent_path();
  for (const auto& s : d.samples) d.chips.push_back(read_chip(base / s.chip_path));
  return d;
}

}  // namespace spatioformer::data
