// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "spatioformer/cli/cli.hpp"
#include "spatioformer/data/split.hpp"
#include "spatioformer/data/synth.hpp"
#include "spatioformer/geoenc.hpp"
#include "spatioformer/mapper/mapper.hpp"
#include "spatioformer/model/attention.hpp"
#include "spatioformer/train/train.hpp"
#include "spatioformer/uncert.hpp"
#include "support.hpp"

using namespace spatioformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

model::ModelParams seeded(const model::ModelConfig& cfg, std::uint64_t seed) {
  numerics::RngStream rng(seed, 0);
  return model::init(cfg, rng);
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t groups = 0;
  for (auto kind : {model::ModelKind::spatioformer, model::ModelKind::vit, model::ModelKind::cnn}) {
    const auto cfg = sf_test::small_config(kind, 3);
    auto p = seeded(cfg, 3);
    p.get("target.mean").mutable_values()[0] = 20.0;
    p.get("target.std").mutable_values()[0] = 8.0;
    numerics::RngStream crng(4, 1);
    std::vector<data::ImageChip> chips;
    for (int i = 0; i < 3; ++i) chips.push_back(sf_test::random_chip(3, 6, crng, crng.uniform(112, 154), crng.uniform(-44, -10)));
    const std::vector<double> y{12.0, 25.0, 31.0};
    auto loss = [&] {
      numerics::RngStream drop(9, 9);
      return numerics::mse_loss(model::forward_batch(p, cfg, chips, model::RunMode::training(cfg), &drop), y);
    };
    numerics::RngStream pick(5, 5);
    for (const auto& e : p.entries()) {
      if (!e.trainable) continue;
      ++groups;
      const auto gc = sf_test::gradcheck({{e.name, e.tensor}}, loss, 6, pick, 1e-5, 1e-4);
      if (gc.max_rel > worst) {
        worst = gc.max_rel;
        where = std::string(model::kind_name(kind)) + " " + gc.worst;
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 60.0, fmt("%.0f parameter groups, max rel err %.2e (limit 1e-4), %.1f s (limit 60 s)", static_cast<double>(groups), worst, secs) +
                                           (worst >= 1e-4 ? "; worst " + where : "")};
}

Outcome decomposition() {
  numerics::RngStream rng(30, 0);
  double worst = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto cfg = sf_test::small_config(model::ModelKind::spatioformer, 1 + 2 * rng.below(3));
    auto p = seeded(cfg, 100 + static_cast<std::uint64_t>(draw));
    for (auto& e : p.entries())
      if (e.name.find("ln1.") != std::string::npos)
        for (auto& v : e.tensor.mutable_values()) v = rng.uniform(-1.5, 1.5);
    p.get("lambda").mutable_values()[0] = rng.uniform(-2e4, 2e4);
    const auto chip = sf_test::random_chip(cfg.chip_size, cfg.bands, rng, rng.uniform(-180, 180), rng.uniform(-80, 80));
    const auto d = model::attention_decompose(p, cfg, chip, rng.below(cfg.layers), rng.below(cfg.heads));
    for (std::size_t k = 0; k < d.full.size(); ++k)
      worst = std::max(worst, std::abs(d.term_pp[k] + d.term_pg[k] + d.term_gp[k] + d.term_gg[k] - d.full[k]));
  }
  return {worst < 1e-9, fmt("100 draws, max |sum of terms - fused logit| = %.2e (limit 1e-9)", worst)};
}

Outcome lambda_zero() {
  auto scfg = sf_test::small_config(model::ModelKind::spatioformer, 9);
  scfg.global_token = false;
  auto vcfg = scfg;
  vcfg.kind = model::ModelKind::vit;
  auto sp = seeded(scfg, 11);
  sp.get("lambda").mutable_values()[0] = 0.0;
  model::ModelParams vp(model::ModelKind::vit);
  for (const auto& e : sp.entries())
    if (e.name != "lambda") vp.add(e.name, e.tensor.detach(), e.trainable);
  numerics::RngStream rng(12, 1);
  std::vector<data::ImageChip> chips;
  for (int i = 0; i < 16; ++i) chips.push_back(sf_test::random_chip(9, 6, rng, rng.uniform(112, 154), rng.uniform(-44, -10)));
  const auto ys = model::forward_batch(sp, scfg, chips, model::RunMode::inference());
  const auto yv = model::forward_batch(vp, vcfg, chips, model::RunMode::inference());
  const bool same = ys.size() == yv.size() && std::memcmp(ys.values().data(), yv.values().data(), ys.size() * sizeof(double)) == 0;
  return {same, same ? "16 chips at 9x9, outputs bit-identical" : "outputs differ"};
}

Outcome encoder() {
  const geo::GeoEncoderConfig cfg{16, 1.0, 100.0};
  numerics::RngStream rng(5, 0);
  bool bounded = true;
  for (int i = 0; i < 20000; ++i)
    for (double v : geo::encode(cfg, rng.uniform(-1e4, 1e4), rng.uniform(-1e4, 1e4))) bounded = bounded && v >= -2.0 && v <= 2.0;
  const auto o = geo::encode(cfg, 0.0, 0.0);
  bool origin = true;
  for (std::size_t j = 1; j <= 16; ++j) origin = origin && o[j - 1] == (j % 2 == 0 ? 0.0 : 2.0);
  bool ladder = true;
  for (std::size_t j = 1; j < 16; ++j) ladder = ladder && geo::lon_wavelength(cfg, j) < geo::lon_wavelength(cfg, j + 1) &&
                                               geo::lat_wavelength(cfg, j) > geo::lat_wavelength(cfg, j + 1);
  numerics::RngStream prng(7, 0);
  std::vector<geo::GeoPoint> pts;
  for (int i = 0; i < 1000; ++i) pts.push_back({prng.uniform(112.0, 154.0), prng.uniform(-44.0, -10.0)});
  const double dist = geo::distinctiveness(cfg, pts, 0.01);
  return {bounded && origin && ladder && dist > 0.0, std::string("bounded ") + (bounded ? "yes" : "no") + ", origin " + (origin ? "exact" : "wrong") +
                                                          ", ladder " + (ladder ? "monotone" : "broken") + fmt(", distinctiveness %.3e", dist)};
}

Outcome benchmark() {
  const auto t0 = std::chrono::steady_clock::now();
  data::SynthConfig sc;
  sc.regions = 4;
  sc.chip_size = 1;
  sc.texture_max = 0.0;
  numerics::RngStream rng(7, 1);
  const auto ds = data::synth_generate(sc, 4000, rng);
  const auto a = data::split_by_tiles(ds.samples, data::TileGrid{}, {0.8, 0.1, 0.1}, 7);
  const auto tr = ds.subset(a.indices(ds.samples, data::Split::train));
  const auto va = ds.subset(a.indices(ds.samples, data::Split::val));
  const auto te = ds.subset(a.indices(ds.samples, data::Split::test));
  const double bayes = data::geo_blind_bayes_risk(sc);

  auto run = [&](model::ModelKind kind, std::size_t epochs) {
    train::TrainConfig tc;
    tc.model.kind = kind;
    tc.model.chip_size = 1;
    tc.epochs = epochs;
    tc.seed = 7;
    numerics::RngStream ir(tc.seed, 0x696e6974);
    const auto res = train::train(model::init(tc.model, ir), tc, tr, va);
    if (res.aborted) throw NumericError(std::string(model::kind_name(kind)) + " aborted: " + res.abort_reason);
    return train::evaluate(res.params, tc.model, te).mse;
  };
  const double sf = run(model::ModelKind::spatioformer, 100);
  const double vit = run(model::ModelKind::vit, 200);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = sf < bayes && vit >= 0.95 * bayes && secs < 900.0;
  return {pass, fmt("geo-blind Bayes risk %.2f; spatioformer test MSE %.2f (must be < risk); vit %.2f (must be >= %.2f)", bayes, sf, vit,
                    0.95 * bayes) +
                    fmt("; %.0f s (limit 900 s)", secs)};
}

Outcome split_counts() {
  const data::TileGrid g;
  std::vector<data::SampleRecord> tiles;
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 479; ++i) {
      data::SampleRecord s;
      s.id = data::sample_id(tiles.size());
      s.lon = g.origin_lon + (i + 0.5) * g.tile_lon;
      s.lat = g.origin_lat + (j + 0.5) * g.tile_lat;
      tiles.push_back(s);
    }
  const auto n = data::split_by_tiles(tiles, g, {0.8, 0.1, 0.1}, 1).tile_counts();
  const bool counts = n[0] == 766 && n[1] == 96 && n[2] == 96;

  numerics::RngStream rng(3, 0);
  data::SynthConfig sc;
  sc.chip_size = 1;
  const auto d = data::synth_generate(sc, 2000, rng);
  bool pure = true;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto a = data::split_by_tiles(d.samples, g, {0.8, 0.1, 0.1}, seed);
    std::set<std::string> ids;
    std::map<data::TileIndex, data::Split> owner;
    std::size_t total = 0;
    for (auto which : {data::Split::train, data::Split::val, data::Split::test})
      for (auto i : a.indices(d.samples, which)) {
        ++total;
        pure = pure && ids.insert(d.samples[i].id).second;
        const auto [it, fresh] = owner.emplace(g.tile_of(d.samples[i].lon, d.samples[i].lat), which);
        pure = pure && (fresh || it->second == which);
      }
    pure = pure && total == d.size();
  }
  return {counts && pure, fmt("958 tiles -> %.0f/%.0f/%.0f", static_cast<double>(n[0]), static_cast<double>(n[1]), static_cast<double>(n[2])) +
                              "; purity and disjointness " + (pure ? "hold" : "violated") + " on 25 seeds"};
}

Outcome metrics() {
  const auto m = train::compute_metrics(std::vector<double>{10, 20, 30}, std::vector<double>{12, 18, 33});
  const double r = 210.0 / std::sqrt(200.0 * 234.0);
  const double expect[7] = {r, r * r, 7.0 / 3.0, 7.0 / 60.0, 17.0 / 3.0, 17.0 / 1400.0, std::sqrt(17.0 / 3.0)};
  const double got[7] = {m.r, m.r2, m.mae, m.rae, m.mse, m.rse, m.rmse};
  double worst = 0.0;
  for (int i = 0; i < 7; ++i) worst = std::max(worst, std::abs(got[i] - expect[i]));
  numerics::RngStream rng(1, 0);
  double ident = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<double> y(40), p(40);
    for (std::size_t i = 0; i < 40; ++i) {
      y[i] = rng.uniform(0, 80);
      p[i] = y[i] + rng.normal(0, 10);
    }
    const auto q = train::compute_metrics(y, p);
    ident = std::max({ident, std::abs(q.r2 - q.r * q.r), std::abs(q.rmse * q.rmse - q.mse) / std::max(1.0, q.mse)});
  }
  return {worst < 1e-12 && ident < 1e-12, fmt("hand example max abs err %.2e; identity residual %.2e (limit 1e-12)", worst, ident)};
}

Outcome mc_oracle() {
  const auto e = uncert::mc_statistics(std::vector<double>{8, 12});
  const bool hand = std::abs(e.mean - 10.0) < 1e-9 && std::abs(e.epsilon - 0.28284271247461906) < 1e-9;
  numerics::RngStream rng(2, 0);
  std::vector<double> v(100);
  for (auto& x : v) x = rng.uniform(5, 40);
  const double eps = uncert::mc_statistics(v).epsilon;
  double drift = 0.0;
  for (double k : {1e-3, 0.5, 7.0, 1e5}) {
    std::vector<double> w;
    for (double x : v) w.push_back(k * x);
    drift = std::max(drift, std::abs(uncert::mc_statistics(w).epsilon - eps));
  }
  const uncert::UncertaintyConfig d;
  const bool defaults = d.n == 100 && d.mc_dropout_rate == 0.5;
  return {hand && drift < 1e-12 && defaults, fmt("[8,12] -> (%.12g, %.12g); scale drift %.1e; ", e.mean, e.epsilon, drift) +
                                                  fmt("defaults n=%.0f rate=%.2f", static_cast<double>(d.n), d.mc_dropout_rate)};
}

Outcome mapping() {
  std::vector<std::string> problems;
  // Single cell.
  {
    const auto cfg = sf_test::small_config(model::ModelKind::spatioformer, 1);
    const auto p = seeded(cfg, 1);
    numerics::RngStream rng(2, 0);
    const mapper::RasterStack s{data::synth_scene({150.0, -30.0, 150.25, -29.75}, 0.25, 6, rng, 0.05)};
    mapper::MapConfig mc;
    mc.chip_size = 1;
    const auto m = mapper::predict_map(p, cfg, s, mc);
    auto chip = data::ImageChip::blank(1, 6, 150.125, -29.875, 0.25);
    for (std::size_t b = 0; b < 6; ++b) chip.reflectance[b] = s.grids[b].values[0];
    if (m.values[0] != model::forward(p, cfg, chip)) problems.push_back("single cell differs from forward");
  }
  // Aggregate by hand.
  {
    auto g8 = RasterGrid::make({0, 0, 1, 1}, 1.0, "", "", 8.0), g12 = RasterGrid::make({0, 0, 1, 1}, 1.0, "", "", 12.0);
    const mapper::RasterStack st{{g8, g12}};
    if (std::abs(mapper::aggregate(st, mapper::Stat::mean).values[0] - 10.0) > 1e-12) problems.push_back("aggregate mean");
    if (std::abs(mapper::aggregate(st, mapper::Stat::std).values[0] - std::sqrt(8.0)) > 1e-12) problems.push_back("aggregate std");
  }
  // Round trip and the uniform-scene check.
  {
    const auto cfg = sf_test::small_config(model::ModelKind::spatioformer, 3);
    auto p = seeded(cfg, 9);
    numerics::RngStream rng(10, 0);
    const mapper::RasterStack s{data::synth_scene({130.0, -35.0, 135.0, -30.0}, 0.5, 6, rng, 0.0)};
    mapper::MapConfig mc;
    mc.chip_size = 3;
    const auto geo = mapper::predict_map(p, cfg, s, mc);
    const auto back = decode_raster(encode_raster(geo));
    if (std::memcmp(back.values.data(), geo.values.data(), geo.values.size() * sizeof(double)) != 0) problems.push_back("raster round trip");
    const auto [lo, hi] = std::minmax_element(geo.values.begin(), geo.values.end());
    if (!(*hi > *lo)) problems.push_back("lambda != 0 map is constant");
    p.get("lambda").mutable_values()[0] = 0.0;
    const auto flat = mapper::predict_map(p, cfg, s, mc);
    for (double v : flat.values)
      if (v != flat.values[0]) {
        problems.push_back("lambda = 0 map not constant");
        break;
      }
  }
  std::string detail = problems.empty() ? "single cell, aggregate (10, sqrt 8), round trip and uniform-scene checks hold" : "";
  for (const auto& s : problems) detail += (detail.empty() ? "" : "; ") + s;
  return {problems.empty(), detail};
}

int quiet_dispatch(std::vector<std::string> args) {
  args.insert(args.begin(), "spatioformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream sink;
  auto* old = std::cout.rdbuf(sink.rdbuf());
  const int rc = cli::dispatch(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  return rc;
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "sf_acceptance_det";
  fs::remove_all(root);
  auto pipeline = [&](const fs::path& dir) {
    const std::string d = dir.string();
    int rc = quiet_dispatch({"synth", "--n", "400", "--seed", "21", "--scene-size", "12", "--scene-cell", "0.1", "--out", d + "/data"});
    rc |= quiet_dispatch({"split", "--samples", d + "/data/samples.csv", "--seed", "21", "--out", d + "/split"});
    rc |= quiet_dispatch({"train", "--train", d + "/split/train.csv", "--val", d + "/split/val.csv", "--epochs", "3", "--chip-size", "3", "--seed",
                          "21", "--out", d + "/model"});
    rc |= quiet_dispatch({"eval", "--checkpoint", d + "/model/checkpoint.bin", "--test", d + "/split/test.csv", "--out", d + "/eval"});
    rc |= quiet_dispatch({"predict-map", "--checkpoint", d + "/model/checkpoint.bin", "--scene", d + "/data/scene", "--year", "2020", "--out",
                          d + "/maps"});
    return rc;
  };
  if (pipeline(root / "a") != 0 || pipeline(root / "b") != 0) return {false, "pipeline command failed"};
  std::vector<std::string> differ;
  const std::vector<std::string> files{"data/samples.csv", "split/split.json", "model/epochs.csv", "model/checkpoint.bin", "eval/metrics.csv",
                                       "maps/richness_2020.rast"};
  for (const auto& f : files)
    if (numerics::read_file_bytes(root / "a" / f) != numerics::read_file_bytes(root / "b" / f)) differ.push_back(f);
  std::string detail = differ.empty() ? "checkpoint, metrics, map and intermediate files byte-identical across two runs" : "differ:";
  for (const auto& f : differ) detail += " " + f;
  return {differ.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradients},
      {"attention decomposition identity", decomposition},
      {"lambda=0 reduction to ViT", lambda_zero},
      {"geolocation encoder properties", encoder},
      {"synthetic location-dependence benchmark", benchmark},
      {"tile split counts and purity", split_counts},
      {"metric self-consistency", metrics},
      {"MC dropout uncertainty oracle", mc_oracle},
      {"mapping consistency", mapping},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
