#pragma once

// Experiment configuration: where the system comes from, trainer and
// critic settings, and output options. Parsed strictly: unknown keys and
// ill-typed values are rejected before any computation starts.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hierlqr/gtd.hpp"
#include "hierlqr/io.hpp"
#include "hierlqr/npg.hpp"
#include "hierlqr/sysmodel.hpp"

namespace hierlqr {

struct GeneratorSpec {
  SubpopulationPartition partition;
  std::uint64_t seed = 0;
  double scale = 0.1;
  double noise = 1.0;
};

enum class InitialGains { Zero, Optimal };

struct ExperimentConfig {
  // Exactly one of these describes the system.
  std::optional<std::filesystem::path> system_file;
  std::optional<GlobalLQRSystem> system_inline;
  std::optional<GeneratorSpec> generator;

  TrainConfig train;
  InitialGains initial_gains = InitialGains::Zero;
  std::filesystem::path output_dir = "out";
  bool emit_plot = false;
};

inline GeneratorSpec generator_from_json(const Json& j, const std::string& where) {
  expect_keys(j, {"sizes", "state_dims", "action_dims", "seed", "scale", "noise"}, where);
  GeneratorSpec g;
  Json pj{{"sizes", require_key(j, "sizes", where)},
          {"state_dims", require_key(j, "state_dims", where)},
          {"action_dims", require_key(j, "action_dims", where)}};
  g.partition = partition_from_json(pj, where);
  if (j.contains("seed")) g.seed = get_as<std::uint64_t>(j.at("seed"), where + ".seed");
  if (j.contains("scale")) g.scale = get_as<double>(j.at("scale"), where + ".scale");
  if (j.contains("noise")) g.noise = get_as<double>(j.at("noise"), where + ".noise");
  if (!(g.scale > 0.0)) throw ConfigError(where + ".scale: must be positive");
  if (!(g.noise > 0.0)) throw ConfigError(where + ".noise: must be positive");
  return g;
}

inline CriticMode mode_from_string(const std::string& s, const std::string& where) {
  if (s == "oracle") return CriticMode::Oracle;
  if (s == "model_free") return CriticMode::ModelFree;
  throw ConfigError(where + ": mode must be 'oracle' or 'model_free'");
}

inline GTDConfig gtd_from_json(const Json& j, const std::string& where) {
  expect_keys(j, {"alpha", "xi2_constant", "radii", "start", "diagnostics_every"}, where);
  GTDConfig g;
  if (j.contains("alpha")) g.alpha = get_as<double>(j.at("alpha"), where + ".alpha");
  if (j.contains("xi2_constant")) g.xi2_constant = get_as<double>(j.at("xi2_constant"), where + ".xi2_constant");
  if (j.contains("radii")) {
    const Json& r = j.at("radii");
    const std::string w = where + ".radii";
    expect_keys(r, {"Gamma1", "Gamma2", "Xi1", "Xi2"}, w);
    GTDRadii rad;
    rad.Gamma1 = get_as<double>(require_key(r, "Gamma1", w), w + ".Gamma1");
    rad.Gamma2 = get_as<double>(require_key(r, "Gamma2", w), w + ".Gamma2");
    rad.Xi1 = get_as<double>(require_key(r, "Xi1", w), w + ".Xi1");
    rad.Xi2 = get_as<double>(require_key(r, "Xi2", w), w + ".Xi2");
    g.radii = rad;
  }
  if (j.contains("start")) {
    const auto s = get_as<std::string>(j.at("start"), where + ".start");
    if (s == "oracle") {
      g.start = StationaryStart::Oracle;
    } else if (s == "burn_in") {
      g.start = StationaryStart::BurnIn;
    } else {
      throw ConfigError(where + ".start: must be 'oracle' or 'burn_in'");
    }
  }
  if (j.contains("diagnostics_every")) {
    g.diagnostics_every = get_as<int>(j.at("diagnostics_every"), where + ".diagnostics_every");
  }
  try {
    g.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return g;
}

inline ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
  const std::string where = "config";
  expect_keys(j, {"system", "train", "gtd", "initial_gains", "output_dir", "emit_plot"}, where);
  ExperimentConfig c;

  const Json& sys = require_key(j, "system", where);
  expect_keys(sys, {"file", "inline", "generate"}, where + ".system");
  if (sys.size() != 1) throw ConfigError(where + ".system: give exactly one of 'file', 'inline', 'generate'");
  if (sys.contains("file")) {
    std::filesystem::path p = get_as<std::string>(sys.at("file"), where + ".system.file");
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    c.system_file = p;
  } else if (sys.contains("inline")) {
    c.system_inline = system_from_json(sys.at("inline"), where + ".system.inline");
  } else {
    c.generator = generator_from_json(sys.at("generate"), where + ".system.generate");
  }

  if (j.contains("train")) {
    const Json& t = j.at("train");
    const std::string w = where + ".train";
    expect_keys(t, {"N_outer", "T_inner", "mode", "eta_override", "sigma_explore", "seed", "warm_start",
                    "cost_from_oracle", "record_wall_time"},
                w);
    auto& tc = c.train;
    if (t.contains("N_outer")) tc.N_outer = get_as<int>(t.at("N_outer"), w + ".N_outer");
    if (t.contains("T_inner")) tc.T_inner = get_as<int>(t.at("T_inner"), w + ".T_inner");
    if (t.contains("mode")) tc.mode = mode_from_string(get_as<std::string>(t.at("mode"), w + ".mode"), w + ".mode");
    if (t.contains("eta_override")) tc.eta_override = get_as<std::vector<double>>(t.at("eta_override"), w + ".eta_override");
    if (t.contains("sigma_explore")) tc.sigma_explore = get_as<std::vector<double>>(t.at("sigma_explore"), w + ".sigma_explore");
    if (t.contains("seed")) tc.seed = get_as<std::uint64_t>(t.at("seed"), w + ".seed");
    if (t.contains("warm_start")) tc.warm_start = get_as<bool>(t.at("warm_start"), w + ".warm_start");
    if (t.contains("cost_from_oracle")) tc.cost_from_oracle = get_as<bool>(t.at("cost_from_oracle"), w + ".cost_from_oracle");
    if (t.contains("record_wall_time")) tc.record_wall_time = get_as<bool>(t.at("record_wall_time"), w + ".record_wall_time");
  }
  if (j.contains("gtd")) c.train.gtd = gtd_from_json(j.at("gtd"), where + ".gtd");
  if (j.contains("initial_gains")) {
    const auto s = get_as<std::string>(j.at("initial_gains"), where + ".initial_gains");
    if (s == "zero") {
      c.initial_gains = InitialGains::Zero;
    } else if (s == "optimal") {
      c.initial_gains = InitialGains::Optimal;
    } else {
      throw ConfigError(where + ".initial_gains: must be 'zero' or 'optimal'");
    }
  }
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j.at("output_dir"), where + ".output_dir");
  if (j.contains("emit_plot")) c.emit_plot = get_as<bool>(j.at("emit_plot"), where + ".emit_plot");

  if (c.train.N_outer < 1) throw ConfigError(where + ".train.N_outer: must be at least 1");
  if (c.train.T_inner < 1) throw ConfigError(where + ".train.T_inner: must be at least 1");
  for (double e : c.train.eta_override)
    if (!(e > 0.0)) throw ConfigError(where + ".train.eta_override: entries must be positive");
  for (double s : c.train.sigma_explore) {
    if (!(s >= 0.0)) throw ConfigError(where + ".train.sigma_explore: entries must be non-negative");
    if (c.train.mode == CriticMode::ModelFree && !(s > 0.0)) {
      throw ConfigError(where + ".train.sigma_explore: entries must be positive in model_free mode");
    }
  }
  return c;
}

}  // namespace hierlqr
