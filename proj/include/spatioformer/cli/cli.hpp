#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "spatioformer/cli/manifest.hpp"
#include "spatioformer/data/samples.hpp"
#include "spatioformer/data/split.hpp"
#include "spatioformer/data/synth.hpp"
#include "spatioformer/geoenc.hpp"
#include "spatioformer/mapper/mapper.hpp"
#include "spatioformer/mapper/png.hpp"
#include "spatioformer/model/params.hpp"
#include "spatioformer/train/train.hpp"
#include "spatioformer/uncert.hpp"

namespace spatioformer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline constexpr const char* kSeedEnv = "SPATIOFORMER_SEED";

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return kExitConfig;
    case ErrorCategory::data: return kExitData;
    case ErrorCategory::numeric: return kExitNumeric;
  }
  return kExitData;
}

namespace detail {

// Unknown keys anywhere a default-constructed T has an object are rejected,
// so typos in config files do not silently fall back to defaults.
inline void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    if (!known.contains(k)) throw ConfigError("unknown config key '" + where + k + "'");
    if (v.is_object() && known.at(k).is_object()) check_keys(v, known.at(k), where + k + ".");
  }
}

template <class T>
T load_config(const std::optional<std::string>& path) {
  if (!path) return T{};
  json j;
  try {
    j = json::parse(numerics::read_file_bytes(*path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + *path + ": " + e.what());
  }
  check_keys(j, json(T{}), "");
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config " + *path + ": " + e.what());
  }
}

inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback = 0) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kSeedEnv)) {
    const auto v = parse_int(env, kSeedEnv);
    if (v < 0) throw ConfigError(std::string(kSeedEnv) + " must be non-negative");
    return static_cast<std::uint64_t>(v);
  }
  return fallback;
}

inline std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& f : split_csv_line(s)) out.push_back(parse_double(f, what));
  return out;
}

inline mapper::RasterStack read_scene(const fs::path& dir, std::size_t bands, RunManifest& m) {
  mapper::RasterStack scene;
  for (std::size_t b = 1; b <= bands; ++b) {
    const auto p = dir / ("band" + std::to_string(b) + ".rast");
    if (!fs::exists(p)) throw DataError("scene: missing " + p.string());
    m.add_input(p);
    scene.grids.push_back(read_raster(p));
  }
  return scene;
}

// Rewrites chip paths so the subset CSV can live in another directory.
inline std::vector<data::SampleRecord> rebase(std::vector<data::SampleRecord> s, const fs::path& from_dir, const fs::path& to_dir) {
  const auto to = fs::absolute(to_dir).lexically_normal();
  for (auto& r : s) r.chip_path = (fs::absolute(from_dir) / r.chip_path).lexically_normal().lexically_relative(to).generic_string();
  return s;
}

inline void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

}  // namespace detail

struct Options {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> config;
  std::string out;
  // synth
  std::size_t n = 1000;
  std::size_t scene_size = 0;
  double scene_cell = 0.0;
  std::string scene_center = "133,-25";
  // split
  std::string samples;
  std::string fractions = "0.8,0.1,0.1";
  // train / eval / ablate
  std::string train_csv, val_csv, test_csv;
  std::optional<std::size_t> epochs, chip_size, batch_size, patience;
  std::optional<std::string> kind;
  std::optional<double> lr, dropout;
  std::string sizes = "1,3,5,7,9";
  std::string checkpoint;
  // maps
  std::string scene;
  std::string year;
  bool uncertainty = false;
  std::size_t mc_n = 100;
  double mc_rate = 0.5;
  std::size_t tile_size = 64;
  std::string stat = "mean";
  std::vector<std::string> inputs;
  bool png = false;
  // encode-geo
  std::optional<double> lon, lat;
  std::size_t layer = 0;
  std::string bbox = "112,-44,154,-10";
  double res = 0.1;
};

inline void cmd_synth(const Options& o) {
  auto cfg = detail::load_config<data::SynthConfig>(o.config);
  cfg.validate();
  const auto seed = detail::resolve_seed(o.seed);
  OutputDir out(o.out);
  RunManifest m{"synth", json{{"synth", cfg}, {"n", o.n}, {"scene_size", o.scene_size}}, seed, {}, {}, utc_timestamp()};
  numerics::RngStream rng(seed, 1);
  auto d = data::synth_generate(cfg, o.n, rng);
  for (std::size_t i = 0; i < d.size(); ++i) out.write(d.samples[i].chip_path, data::encode_chip(d.chips[i]));
  out.write("samples.csv", data::samples_to_csv(d.samples));
  json gen{{"config", cfg}, {"n", o.n}, {"seed", seed}};
  if (cfg.signal == data::SpectralSignal::center_contrast) gen["geo_blind_bayes_risk"] = data::geo_blind_bayes_risk(cfg);
  out.write("generator.json", gen.dump(2) + "\n");
  if (o.scene_size > 0) {
    const auto c = detail::parse_list(o.scene_center, "scene centre");
    if (c.size() != 2) throw ConfigError("--scene-center expects lon,lat");
    const double cell = o.scene_cell > 0.0 ? o.scene_cell : cfg.pixel_pitch;
    const double half = 0.5 * cell * static_cast<double>(o.scene_size);
    numerics::RngStream srng(seed, 2);
    const auto scene = data::synth_scene({c[0] - half, c[1] - half, c[0] + half, c[1] + half}, cell, cfg.bands, srng, cfg.texture_max,
                                         cfg.reflectance_lo, cfg.reflectance_hi);
    for (std::size_t b = 0; b < scene.size(); ++b) out.write("scene/band" + std::to_string(b + 1) + ".rast", encode_raster(scene[b]));
  }
  out.finish(m);
  std::cout << "wrote " << d.size() << " samples to " << out.root().string() << "\n";
}

inline void cmd_split(const Options& o) {
  const auto seed = detail::resolve_seed(o.seed);
  const auto grid = detail::load_config<data::TileGrid>(o.config);
  const auto fr = detail::parse_list(o.fractions, "fraction");
  if (fr.size() != 3) throw ConfigError("--fractions expects three values");
  OutputDir out(o.out);
  RunManifest m{"split", json{{"grid", grid}, {"fractions", fr}}, seed, {}, {}, utc_timestamp()};
  m.add_input(o.samples);
  const auto samples = data::read_samples_csv(o.samples);
  const auto a = data::split_by_tiles(samples, grid, {fr[0], fr[1], fr[2]}, seed);
  detail::print_warnings(a.warnings);
  out.write("split.json", data::split_to_json(a).dump(2) + "\n");
  out.write("split.csv", data::split_to_csv(samples, a));
  const auto counts = a.tile_counts();
  for (auto s : {data::Split::train, data::Split::val, data::Split::test}) {
    std::vector<data::SampleRecord> part;
    for (auto i : a.indices(samples, s)) part.push_back(samples[i]);
    out.write(std::string(data::split_name(s)) + ".csv",
              data::samples_to_csv(detail::rebase(part, fs::path(o.samples).parent_path(), out.root())));
    std::cout << data::split_name(s) << ": " << counts[static_cast<std::size_t>(s)] << " tiles, " << part.size() << " samples\n";
  }
  out.finish(m);
}

inline train::TrainConfig train_config(const Options& o) {
  auto cfg = detail::load_config<train::TrainConfig>(o.config);
  cfg.seed = detail::resolve_seed(o.seed, cfg.seed);
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.chip_size) cfg.model.chip_size = *o.chip_size;
  if (o.batch_size) cfg.batch_size = *o.batch_size;
  if (o.patience) cfg.patience = *o.patience;
  if (o.kind) cfg.model.kind = model::parse_kind(*o.kind);
  if (o.lr) cfg.lr = *o.lr;
  if (o.dropout) cfg.model.dropout = *o.dropout;
  cfg.validate();
  return cfg;
}

inline model::ModelParams initial_params(const train::TrainConfig& cfg) {
  numerics::RngStream rng(cfg.seed, 0x696e6974);
  return model::init(cfg.model, rng);
}

inline void cmd_train(const Options& o) {
  const auto cfg = train_config(o);
  OutputDir out(o.out);
  RunManifest m{"train", cfg, cfg.seed, {}, {}, utc_timestamp()};
  m.add_input(o.train_csv);
  if (!o.val_csv.empty()) m.add_input(o.val_csv);
  const auto tr = data::load_dataset(o.train_csv);
  const auto va = o.val_csv.empty() ? data::Dataset{} : data::load_dataset(o.val_csv);
  const auto res = train::train(initial_params(cfg), cfg, tr, va);
  out.write("epochs.csv", train::epoch_log_csv(res.log));
  out.write("checkpoint.bin", model::encode_params(res.params, cfg.model));
  out.finish(m);
  const auto& last = res.log.back();
  std::cout << "epochs run: " << last.epoch << ", best epoch: " << res.best_epoch << ", final train loss " << last.train_loss << "\n";
  if (res.aborted) throw NumericError("training aborted (" + res.abort_reason + "); last good checkpoint saved");
}

inline void cmd_eval(const Options& o) {
  OutputDir out(o.out);
  const auto loaded = model::load_params(o.checkpoint);
  RunManifest m{"eval", json{{"model", loaded.config}}, 0, {}, {}, utc_timestamp()};
  m.add_input(o.checkpoint);
  m.add_input(o.test_csv);
  const auto report = train::evaluate(loaded.params, loaded.config, data::load_dataset(o.test_csv));
  detail::print_warnings(report.warnings);
  out.write("metrics.csv", train::metrics_csv_header() + "\n" + train::metrics_csv_row(report) + "\n");
  out.write("metrics.txt", train::metrics_table(report));
  out.finish(m);
  std::cout << train::metrics_table(report);
}

inline void cmd_ablate(const Options& o) {
  const auto cfg = train_config(o);
  std::vector<std::size_t> sizes;
  for (double v : detail::parse_list(o.sizes, "chip size")) sizes.push_back(static_cast<std::size_t>(v));
  OutputDir out(o.out);
  RunManifest m{"ablate", json{{"train", cfg}, {"sizes", sizes}}, cfg.seed, {}, {}, utc_timestamp()};
  for (const auto* p : {&o.train_csv, &o.val_csv, &o.test_csv}) m.add_input(*p);
  const auto rows = train::ablate_chip_size(cfg, sizes, data::load_dataset(o.train_csv), data::load_dataset(o.val_csv),
                                            data::load_dataset(o.test_csv));
  out.write("ablation.csv", train::ablation_csv(rows));
  out.finish(m);
  std::cout << train::ablation_csv(rows);
}

inline void cmd_predict(const Options& o) {
  OutputDir out(o.out);
  const auto loaded = model::load_params(o.checkpoint);
  const uncert::UncertaintyConfig ucfg{o.mc_n, o.mc_rate, detail::resolve_seed(o.seed)};
  RunManifest m{"predict", json{{"model", loaded.config}, {"uncertainty", o.uncertainty}, {"mc", ucfg}}, ucfg.seed, {}, {}, utc_timestamp()};
  m.add_input(o.checkpoint);
  m.add_input(o.samples);
  auto d = data::load_dataset(o.samples);
  d = train::detail::fit_to_model(d, loaded.config);
  if (o.uncertainty) {
    std::vector<uncert::McEstimate> est;
    for (const auto& c : d.chips) est.push_back(uncert::mc_uncertainty(loaded.params, loaded.config, c, ucfg));
    out.write("uncertainty.csv", uncert::uncertainty_csv(d.samples, est));
  } else {
    const auto y = model::predict(loaded.params, loaded.config, d.chips);
    std::string csv = "id,y_det\n";
    for (std::size_t i = 0; i < y.size(); ++i) csv += d.samples[i].id + "," + format_double(y[i]) + "\n";
    out.write("predictions.csv", csv);
  }
  out.finish(m);
}

inline void cmd_predict_map(const Options& o) {
  OutputDir out(o.out);
  const auto loaded = model::load_params(o.checkpoint);
  mapper::MapConfig mcfg;
  mcfg.chip_size = o.chip_size.value_or(loaded.config.chip_size);
  mcfg.tile_size = o.tile_size;
  mcfg.tag = o.year;
  const uncert::UncertaintyConfig ucfg{o.mc_n, o.mc_rate, detail::resolve_seed(o.seed)};
  RunManifest m{"predict-map", json{{"model", loaded.config}, {"map", mcfg}, {"uncertainty", o.uncertainty}, {"mc", ucfg}}, ucfg.seed, {}, {},
                utc_timestamp()};
  m.add_input(o.checkpoint);
  const auto scene = detail::read_scene(o.scene, loaded.config.bands, m);
  const std::string suffix = o.year.empty() ? "" : "_" + o.year;
  auto emit = [&](const std::string& stem, const RasterGrid& g) {
    out.write(stem + suffix + ".rast", encode_raster(g));
    if (o.png) out.write(stem + suffix + ".png", mapper::encode_png(g));
  };
  if (o.uncertainty) {
    const auto maps = mapper::uncertainty_map(loaded.params, loaded.config, scene, ucfg, mcfg);
    if (maps.undefined_cells > 0) std::cerr << "warning: " << maps.undefined_cells << " cells have zero MC mean; epsilon masked there\n";
    emit("richness", maps.deterministic);
    emit("richness_mc", maps.mc_mean);
    emit("epsilon", maps.epsilon);
  } else {
    emit("richness", mapper::predict_map(loaded.params, loaded.config, scene, mcfg));
  }
  out.finish(m);
}

inline void cmd_aggregate(const Options& o) {
  const auto stat = mapper::parse_stat(o.stat);
  OutputDir out(o.out);
  RunManifest m{"aggregate", json{{"stat", o.stat}}, 0, {}, {}, utc_timestamp()};
  mapper::RasterStack stack;
  for (const auto& p : o.inputs) {
    m.add_input(p);
    stack.grids.push_back(read_raster(p));
  }
  const auto g = mapper::aggregate(stack, stat);
  out.write(o.stat + ".rast", encode_raster(g));
  if (o.png) out.write(o.stat + ".png", mapper::encode_png(g));
  out.finish(m);
}

inline void cmd_encode_geo(const Options& o) {
  const auto cfg = detail::load_config<geo::GeoEncoderConfig>(o.config);
  cfg.validate();
  if (o.layer > 0) {
    if (o.out.empty()) throw ConfigError("encode-geo --layer needs --out");
    const auto b = detail::parse_list(o.bbox, "bbox");
    if (b.size() != 4) throw ConfigError("--bbox expects west,south,east,north");
    OutputDir out(o.out);
    RunManifest m{"encode-geo", json{{"geo", cfg}, {"layer", o.layer}, {"bbox", b}, {"res", o.res}}, 0, {}, {}, utc_timestamp()};
    const auto g = geo::render_layer(cfg, o.layer, {b[0], b[1], b[2], b[3]}, o.res);
    out.write("layer" + std::to_string(o.layer) + ".rast", encode_raster(g));
    out.write("layer" + std::to_string(o.layer) + ".png", mapper::encode_png(g, -2.0, 2.0));
    out.finish(m);
    return;
  }
  if (!o.lon || !o.lat) throw ConfigError("encode-geo needs --lon and --lat, or --layer");
  const auto t = geo::encode(cfg, *o.lon, *o.lat);
  for (std::size_t j = 0; j < t.size(); ++j) std::cout << (j ? "," : "") << format_double(t[j]);
  std::cout << "\n";
}

// Parses argv and runs one subcommand. Returns the process exit status.
inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Location-aware richness regression from multispectral image chips", "spatioformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;
  auto seed_opt = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, std::string("Random seed (default: $") + kSeedEnv + ", else 0)");
  };
  auto out_opt = [&](CLI::App* c) { c->add_option("--out", o.out, "Output directory")->required(); };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic location-dependent dataset");
  synth->add_option("--config", o.config, "Generator JSON config")->check(CLI::ExistingFile);
  synth->add_option("--n", o.n, "Number of samples")->capture_default_str();
  synth->add_option("--scene-size", o.scene_size, "Also write an N x N six-band scene (0 = none)");
  synth->add_option("--scene-cell", o.scene_cell, "Scene cell size in degrees (default: generator pixel pitch)");
  synth->add_option("--scene-center", o.scene_center, "Scene centre lon,lat")->capture_default_str();
  seed_opt(synth);
  out_opt(synth);

  auto* split = app.add_subcommand("split", "Assign whole tiles to train/val/test");
  split->add_option("--samples", o.samples, "Sample CSV")->required()->check(CLI::ExistingFile);
  split->add_option("--config", o.config, "Tile grid JSON")->check(CLI::ExistingFile);
  split->add_option("--fractions", o.fractions, "train,val,test tile fractions")->capture_default_str();
  seed_opt(split);
  out_opt(split);

  auto train_opts = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Training JSON config")->check(CLI::ExistingFile);
    c->add_option("--kind", o.kind, "spatioformer | vit | cnn");
    c->add_option("--epochs", o.epochs, "Maximum epochs");
    c->add_option("--chip-size", o.chip_size, "Chip size (odd)");
    c->add_option("--batch-size", o.batch_size, "Mini-batch size");
    c->add_option("--patience", o.patience, "Early-stopping patience in epochs");
    c->add_option("--lr", o.lr, "Peak learning rate");
    c->add_option("--dropout", o.dropout, "Dropout rate");
    c->add_option("--train", o.train_csv, "Training sample CSV")->required()->check(CLI::ExistingFile);
    seed_opt(c);
    out_opt(c);
  };
  auto* train = app.add_subcommand("train", "Train a model");
  train_opts(train);
  train->add_option("--val", o.val_csv, "Validation sample CSV")->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate once per chip size");
  train_opts(ablate);
  ablate->add_option("--val", o.val_csv, "Validation sample CSV")->required()->check(CLI::ExistingFile);
  ablate->add_option("--test", o.test_csv, "Test sample CSV")->required()->check(CLI::ExistingFile);
  ablate->add_option("--sizes", o.sizes, "Comma-separated chip sizes")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Compute the metric suite on a test set");
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--test", o.test_csv, "Test sample CSV")->required()->check(CLI::ExistingFile);
  out_opt(eval);

  auto mc_opts = [&](CLI::App* c) {
    c->add_option("--n", o.mc_n, "MC dropout repetitions")->capture_default_str();
    c->add_option("--rate", o.mc_rate, "MC dropout rate")->capture_default_str();
    seed_opt(c);
  };
  auto* predict = app.add_subcommand("predict", "Predict richness for a sample CSV");
  predict->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--samples", o.samples, "Sample CSV")->required()->check(CLI::ExistingFile);
  predict->add_flag("--uncertainty", o.uncertainty, "Add MC dropout mean and coefficient of variation");
  mc_opts(predict);
  out_opt(predict);

  auto* unc = app.add_subcommand("uncertainty", "MC dropout uncertainty per sample (predict --uncertainty)");
  unc->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  unc->add_option("--samples", o.samples, "Sample CSV")->required()->check(CLI::ExistingFile);
  mc_opts(unc);
  out_opt(unc);

  auto* pmap = app.add_subcommand("predict-map", "Tiled richness (and uncertainty) map over a scene");
  pmap->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  pmap->add_option("--scene", o.scene, "Directory with band1.rast .. band6.rast")->required()->check(CLI::ExistingDirectory);
  pmap->add_option("--year", o.year, "Year tag for the output map");
  pmap->add_option("--chip-size", o.chip_size, "Must match the checkpoint");
  pmap->add_option("--tile-size", o.tile_size, "Cells per tile side")->capture_default_str();
  pmap->add_flag("--uncertainty", o.uncertainty, "Also write MC dropout maps");
  pmap->add_flag("--png", o.png, "Also write PNG renderings");
  mc_opts(pmap);
  out_opt(pmap);

  auto* agg = app.add_subcommand("aggregate", "Cross-year per-cell mean or std");
  agg->add_option("--stat", o.stat, "mean | std")->capture_default_str()->check(CLI::IsMember({"mean", "std"}));
  agg->add_option("--inputs", o.inputs, "Input rasters")->required()->expected(1, -1)->check(CLI::ExistingFile);
  agg->add_flag("--png", o.png, "Also write a PNG rendering");
  out_opt(agg);

  auto* enc = app.add_subcommand("encode-geo", "Print a geolocation token or render one layer");
  enc->add_option("--config", o.config, "Encoder JSON config (d, a, c)")->check(CLI::ExistingFile);
  enc->add_option("--lon", o.lon, "Longitude");
  enc->add_option("--lat", o.lat, "Latitude");
  enc->add_option("--layer", o.layer, "Render layer j (1-based) instead");
  enc->add_option("--bbox", o.bbox, "west,south,east,north for --layer")->capture_default_str();
  enc->add_option("--res", o.res, "Cell size in degrees for --layer")->capture_default_str();
  enc->add_option("--out", o.out, "Output directory for --layer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) cmd_synth(o);
    else if (split->parsed()) cmd_split(o);
    else if (train->parsed()) cmd_train(o);
    else if (ablate->parsed()) cmd_ablate(o);
    else if (eval->parsed()) cmd_eval(o);
    else if (predict->parsed()) cmd_predict(o);
    else if (unc->parsed()) {
      o.uncertainty = true;
      cmd_predict(o);
    } else if (pmap->parsed()) cmd_predict_map(o);
    else if (agg->parsed()) cmd_aggregate(o);
    else if (enc->parsed()) cmd_encode_geo(o);
  } catch (const Error& e) {
    std::cerr << category_name(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace spatioformer::cli
