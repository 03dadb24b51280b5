// Experiment runner: generate, verify, decompose, eval and train.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration or schema
// error, 3 instability abort, 4 I/O error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hierlqr/config.hpp"
#include "hierlqr/decomp.hpp"
#include "hierlqr/io.hpp"
#include "hierlqr/npg.hpp"
#include "hierlqr/oracle.hpp"
#include "hierlqr/plot.hpp"
#include "hierlqr/sysmodel.hpp"

namespace fs = std::filesystem;
using namespace hierlqr;

namespace {

enum Exit { kOk = 0, kVerifyFailed = 1, kSchema = 2, kUnstable = 3, kIo = 4 };

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
}

GlobalLQRSystem load_system(const std::string& path) { return system_from_json(read_json_file(path), path); }

struct NamedInstance {
  std::string id;
  LQRInstance inst;
};

NamedInstance select_instance(const GlobalLQRSystem& sys, const std::string& id) {
  if (id == "global") {
    return {id, LQRInstance{sys.A, sys.B, sys.Q, sys.R, global_noise_covariance(sys)}};
  }
  const AuxiliaryEnsemble ens = build_auxiliary(sys);
  for (auto& p : auxiliary_problems(ens)) {
    if (p.id == id) return {id, p.inst};
  }
  std::string known = "global";
  for (auto& p : auxiliary_problems(ens)) known += ", " + p.id;
  throw ConfigError("unknown subsystem '" + id + "' (available: " + known + ")");
}

Mat parse_gain(const std::string& text, Index rows, Index cols) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      vals.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("--gain: cannot parse '" + tok + "'");
    }
  }
  if (Index(vals.size()) != rows * cols) {
    throw ConfigError("--gain: expected " + std::to_string(rows * cols) + " row-major entries");
  }
  Mat K(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) K(i, j) = vals[i * cols + j];
  return K;
}

Json summary_json(const TrainHistory& th, const TrainConfig& cfg) {
  Json systems = Json::array();
  for (const auto& s : th.systems) {
    systems.push_back(Json{{"id", s.id},
                           {"agents", s.multiplier},
                           {"eta", s.eta},
                           {"sigma", s.sigma},
                           {"contraction", s.contraction},
                           {"C_star", s.C_star},
                           {"initial_gap", s.iters.front().gap},
                           {"final_gap", s.iters.back().gap},
                           {"cost_source", s.cost_source},
                           {"aborted", s.aborted},
                           {"abort_reason", s.abort_reason}});
  }
  Json checks = Json::array();
  for (const auto& c : th.composed_checks) {
    checks.push_back(Json{{"n", c.n}, {"composed_cost", c.composed_cost}, {"sum_of_parts", c.sum_of_parts}, {"rel_err", c.rel_err}});
  }
  return Json{{"mode", cfg.mode == CriticMode::Oracle ? "oracle" : "model_free"},
              {"seed", cfg.seed},
              {"N_outer", cfg.N_outer},
              {"T_inner", cfg.T_inner},
              {"iterations_completed", th.total_gap.empty() ? 0 : th.total_gap.size() - 1},
              {"initial_total_gap", th.total_gap.front()},
              {"final_total_gap", th.total_gap.back()},
              {"M", th.M},
              {"aborted", th.aborted},
              {"abort_system", th.abort_system},
              {"abort_reason", th.abort_reason},
              {"systems", systems},
              {"composed_checks", checks}};
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out_dir,
              const std::string& mode, bool emit_plot) {
  const fs::path cfg_path(config_path);
  ExperimentConfig cfg = config_from_json(read_json_file(cfg_path), cfg_path.parent_path());
  if (seed) cfg.train.seed = *seed;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (!mode.empty()) cfg.train.mode = mode_from_string(mode, "--mode");
  if (emit_plot) cfg.emit_plot = true;

  GlobalLQRSystem sys;
  if (cfg.system_file) {
    sys = system_from_json(read_json_file(*cfg.system_file), cfg.system_file->string());
  } else if (cfg.system_inline) {
    sys = *cfg.system_inline;
  } else {
    const auto& g = *cfg.generator;
    sys = generate_system(g.partition, g.seed, g.scale, g.noise);
  }
  const AuxiliaryEnsemble ens = build_auxiliary(sys);
  HierarchicalInit init = zero_gains(sys.partition);
  if (cfg.initial_gains == InitialGains::Optimal) {
    for (const auto& p : auxiliary_problems(ens)) {
      const Mat K = optimal_policy(p.inst).K;
      if (p.subpopulation >= 0) {
        init.K_sub[p.subpopulation] = K;
      } else {
        init.K_bar = K;
      }
    }
  }
  cfg.train.validate(auxiliary_problems(ens).size());

  const TrainHistory th = train_hierarchical(sys, ens, init, cfg.train);
  std::ostringstream csv;
  write_history_csv(csv, th);
  write_file_atomic(cfg.output_dir / "history.csv", csv.str());
  write_file_atomic(cfg.output_dir / "summary.json", dump_json(summary_json(th, cfg.train)));
  if (cfg.emit_plot) {
    std::vector<PlotSeries> series;
    for (const auto& s : th.systems) {
      PlotSeries ps{s.id, {}};
      for (const auto& r : s.iters) ps.values.push_back(r.gap);
      series.push_back(std::move(ps));
    }
    series.push_back({"total", th.total_gap});
    write_file_atomic(cfg.output_dir / "plot.svg", svg_log_plot(series, "Optimality gap", "C(K_n) - C(K*)"));
  }
  if (th.aborted) {
    std::cerr << "training aborted in " << th.abort_system << ": " << th.abort_reason << "\n";
    return kUnstable;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical mean-field multi-agent LQR experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Generate a random partially exchangeable system");
  std::vector<int> sizes, state_dims, action_dims;
  std::uint64_t gen_seed = 0;
  double scale = 0.1, noise = 1.0;
  std::string gen_out, gen_config;
  gen->add_option("--config", gen_config, "Experiment config whose system.generate block is used");
  gen->add_option("--sizes", sizes, "Agents per subpopulation");
  gen->add_option("--state-dims", state_dims, "State dimension per subpopulation");
  gen->add_option("--action-dims", action_dims, "Action dimension per subpopulation");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--scale", scale, "Standard deviation of the free blocks");
  gen->add_option("--noise", noise, "Per-agent noise standard deviation");
  gen->add_option("--out", gen_out, "Output file (stdout when omitted)");

  auto* ver = app.add_subcommand("verify", "Check partial exchangeability of a system");
  std::string ver_system;
  double ver_tol = kExchangeabilityTol;
  ver->add_option("--system", ver_system, "System JSON file")->required();
  ver->add_option("--tol", ver_tol, "Absolute tolerance on block deviations");

  auto* dec = app.add_subcommand("decompose", "Build the auxiliary systems of a system");
  std::string dec_system, dec_out;
  dec->add_option("--system", dec_system, "System JSON file")->required();
  dec->add_option("--out", dec_out, "Output file (stdout when omitted)");

  auto* ev = app.add_subcommand("eval", "Analyze a linear policy on an auxiliary or the global system");
  std::string ev_system, ev_sub = "MF", ev_gain;
  double ev_sigma = 0.0;
  bool ev_optimal = false;
  ev->add_option("--system", ev_system, "System JSON file")->required();
  ev->add_option("--subsystem", ev_sub, "S<l>, MF or global");
  ev->add_option("--gain", ev_gain, "Comma-separated row-major gain (zero when omitted)");
  ev->add_flag("--optimal", ev_optimal, "Evaluate the optimal gain");
  ev->add_option("--sigma", ev_sigma, "Exploration standard deviation");

  auto* tr = app.add_subcommand("train", "Run hierarchical natural actor-critic training");
  std::string tr_config, tr_out, tr_mode;
  std::optional<std::uint64_t> tr_seed;
  bool tr_plot = false;
  tr->add_option("--config", tr_config, "Experiment config JSON")->required();
  tr->add_option("--seed", tr_seed, "Override train.seed");
  tr->add_option("--out", tr_out, "Override output_dir");
  tr->add_option("--mode", tr_mode, "oracle or model_free")->check(CLI::IsMember({"oracle", "model_free"}));
  tr->add_flag("--emit-plot", tr_plot, "Write plot.svg");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kSchema;
  }

  try {
    if (*gen) {
      GeneratorSpec g;
      if (!gen_config.empty()) {
        const ExperimentConfig cfg = config_from_json(read_json_file(gen_config));
        if (!cfg.generator) throw ConfigError(gen_config + ": system.generate block required");
        g = *cfg.generator;
      } else {
        if (sizes.empty()) throw ConfigError("generate: --sizes or --config required");
        if (state_dims.empty()) state_dims.assign(sizes.size(), 1);
        if (action_dims.empty()) action_dims.assign(sizes.size(), 1);
        g.partition = SubpopulationPartition(sizes, state_dims, action_dims);
        g.scale = scale;
        g.noise = noise;
      }
      if (gen->count("--seed")) g.seed = gen_seed;
      if (!(g.scale > 0.0) || !(g.noise > 0.0)) throw ConfigError("generate: scale and noise must be positive");
      emit(dump_json(to_json(generate_system(g.partition, g.seed, g.scale, g.noise))), gen_out);
      return kOk;
    }
    if (*ver) {
      const auto rep = verify_partial_exchangeability(load_system(ver_system), ver_tol);
      std::cout << dump_json(to_json(rep));
      return rep.holds ? kOk : kVerifyFailed;
    }
    if (*dec) {
      emit(dump_json(to_json(build_auxiliary(load_system(dec_system)))), dec_out);
      return kOk;
    }
    if (*ev) {
      const GlobalLQRSystem sys = load_system(ev_system);
      const NamedInstance ni = select_instance(sys, ev_sub);
      Mat K = Mat::Zero(ni.inst.action_dim(), ni.inst.state_dim());
      if (ev_optimal) {
        K = optimal_policy(ni.inst).K;
      } else if (!ev_gain.empty()) {
        K = parse_gain(ev_gain, ni.inst.action_dim(), ni.inst.state_dim());
      }
      Json out = to_json(analyze_policy(ni.inst, {K, ev_sigma}));
      out["subsystem"] = ni.id;
      out["K"] = to_json(K);
      std::cout << dump_json(out);
      return kOk;
    }
    if (*tr) return cmd_train(tr_config, tr_seed, tr_out, tr_mode, tr_plot);
  } catch (const ExchangeabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << dump_json(to_json(e.report()));
    return kVerifyFailed;
  } catch (const AssumptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kSchema;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kSchema;
  } catch (const InstabilityError& e) {
    std::cerr << "unstable: " << e.what() << "\n";
    return kUnstable;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  }
  return kOk;
}
