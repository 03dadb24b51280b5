#pragma once

// Natural policy gradient actor with either the GTD critic or the exact
// oracle natural gradient, for one LQR instance and for the L+1 auxiliary
// systems of a decomposed multi-agent problem.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "hierlqr/decomp.hpp"
#include "hierlqr/errors.hpp"
#include "hierlqr/format.hpp"
#include "hierlqr/gtd.hpp"
#include "hierlqr/oracle.hpp"
#include "hierlqr/rng.hpp"
#include "hierlqr/sim.hpp"
#include "hierlqr/sysmodel.hpp"

namespace hierlqr {

enum class CriticMode { Oracle, ModelFree };

struct TrainConfig {
  int N_outer = 50;
  int T_inner = 100000;
  CriticMode mode = CriticMode::ModelFree;
  std::vector<double> eta_override;   // empty, one value for all systems, or one per system
  std::vector<double> sigma_explore;  // same convention; defaults to 0 (oracle) or 1 (model free)
  std::uint64_t seed = 0;
  GTDConfig gtd;
  // Start each critic run from the previous run's estimate.
  bool warm_start = true;
  // C(K0) from the oracle; otherwise from a 1e5-step rollout average.
  bool cost_from_oracle = true;
  // Throw if an oracle-mode step violates monotonicity or the contraction bound.
  bool enforce_oracle_bounds = true;
  bool record_wall_time = false;

  void validate(std::size_t systems) const {
    if (N_outer < 1) throw ConfigError("train: N_outer must be at least 1");
    if (T_inner < 1) throw ConfigError("train: T_inner must be at least 1");
    auto check_list = [&](const std::vector<double>& v, const char* name) {
      if (!v.empty() && v.size() != 1 && v.size() != systems) {
        throw ConfigError(std::string("train: ") + name + " needs 1 or " + std::to_string(systems) + " entries");
      }
    };
    check_list(eta_override, "eta_override");
    check_list(sigma_explore, "sigma_explore");
    for (double e : eta_override)
      if (!(e > 0.0)) throw ConfigError("train: eta_override entries must be positive");
    for (double s : sigma_explore) {
      if (!(s >= 0.0)) throw ConfigError("train: sigma_explore entries must be non-negative");
      if (mode == CriticMode::ModelFree && !(s > 0.0)) {
        throw ConfigError("train: sigma_explore must be positive in model_free mode");
      }
    }
    gtd.validate();
  }

  double sigma_for(std::size_t i) const {
    if (sigma_explore.empty()) return mode == CriticMode::ModelFree ? 1.0 : 0.0;
    return sigma_explore.size() == 1 ? sigma_explore[0] : sigma_explore[i];
  }
  std::optional<double> eta_for(std::size_t i) const {
    if (eta_override.empty()) return std::nullopt;
    return eta_override.size() == 1 ? eta_override[0] : eta_override[i];
  }
};

/// [||R|| + ||B||^2 C(K0) / sigma_min(Phi)]^{-1}.
inline double default_stepsize(const LQRInstance& inst, double C_K0) {
  if (!(C_K0 > 0.0)) throw ConfigError("default_stepsize: C(K0) must be positive");
  const double nb = op_norm(inst.B);
  return 1.0 / (op_norm(inst.R) + nb * nb * C_K0 / sigma_min(inst.Phi));
}

inline Mat natural_step(const Mat& K, const Mat& E_hat, double eta) {
  if (K.rows() != E_hat.rows() || K.cols() != E_hat.cols()) {
    throw DimensionError("natural_step: gain and direction shapes differ");
  }
  return K - eta * E_hat;
}

struct IterationRecord {
  int n = 0;
  Mat K;
  double cost = 0.0;  // analytic, scaled by the system's cost multiplier
  double gap = 0.0;
  double critic_err = std::nan("");  // ||E_hat - E||_F, model-free only
  double delta_err = std::nan("");
  double wall_ms = 0.0;
  bool monotone_ok = true;
  bool contraction_ok = true;
};

struct SystemHistory {
  std::string id;
  double multiplier = 1.0;  // agents represented by this system
  double sigma = 0.0;
  double eta = 0.0;
  double C_star = 0.0;      // scaled
  double contraction = 1.0;
  double M_term = 0.0;      // ||Sigma_K*|| / (eta sigma_min(Phi) sigma_min(R))
  std::string cost_source;  // "oracle" or "rollout"
  std::vector<IterationRecord> iters;
  bool aborted = false;
  std::string abort_reason;
};

namespace detail {

inline double rollout_cost_estimate(const LQRInstance& inst, const LinearGaussianPolicy& pol, RngStream& rng) {
  const Vec x0 = burn_in_state(inst, pol, rng);
  return rollout(inst, pol, 100000, rng, x0).average_cost();
}

// Rethrows with `tag` prefixed to the message, keeping the library error type.
[[noreturn]] inline void rethrow_tagged(const std::exception_ptr& ep, const std::string& tag) {
  try {
    std::rethrow_exception(ep);
  } catch (const InstabilityError& e) {
    throw InstabilityError(tag + e.what(), e.spectral_radius());
  } catch (const ConfigError& e) {
    throw ConfigError(tag + e.what());
  } catch (const IntegrityError& e) {
    throw IntegrityError(tag + e.what());
  } catch (const AssumptionError&) {
    throw;
  } catch (const NotStabilizableError& e) {
    throw NotStabilizableError(tag + e.what());
  } catch (const Error& e) {
    throw Error(tag + e.what());
  }
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

inline constexpr double kOracleStepSlack = 1e-9;

/// Alternates critic and actor for N_outer steps. `stream` selects the
/// random stream family; `multiplier` scales reported costs and gaps.
inline SystemHistory train_single(const LQRInstance& inst, const Mat& K0, const TrainConfig& cfg,
                                  std::size_t system_index = 0, std::string id = "system",
                                  double multiplier = 1.0) {
  cfg.validate(std::max({system_index + 1, cfg.sigma_explore.size(), cfg.eta_override.size()}));
  inst.validate();
  SystemHistory h;
  h.id = std::move(id);
  h.multiplier = multiplier;
  h.sigma = cfg.sigma_for(system_index);
  require_stable(inst, K0, ("train_single(" + h.id + ")").c_str());

  const OptimalPolicy opt = optimal_policy(inst);
  const PolicyAnalysis a_star = analyze_policy(inst, {opt.K, h.sigma});
  h.C_star = multiplier * a_star.cost;

  const std::uint64_t base_stream = mix_stream(system_index + 1, 0);
  double C0;
  if (cfg.cost_from_oracle) {
    C0 = analyze_policy(inst, {K0, h.sigma}).cost;
    h.cost_source = "oracle";
  } else {
    RngStream rng(cfg.seed, mix_stream(base_stream, 0xC0));
    C0 = detail::rollout_cost_estimate(inst, {K0, h.sigma}, rng);
    h.cost_source = "rollout";
  }
  h.eta = cfg.eta_for(system_index).value_or(default_stepsize(inst, C0));
  const double sPhi = sigma_min(inst.Phi), sR = sigma_min(inst.R), nS = op_norm(a_star.Sigma);
  h.contraction = 1.0 - h.eta * sPhi * sR / nS;
  h.M_term = nS / (h.eta * sPhi * sR);

  GTDConfig gcfg = cfg.gtd;
  gcfg.T_inner = cfg.T_inner;

  Mat K = K0;
  PolicyAnalysis a = analyze_policy(inst, {K, h.sigma});
  const auto t_start = std::chrono::steady_clock::now();
  auto record = [&](int n) {
    IterationRecord r;
    r.n = n;
    r.K = K;
    r.cost = multiplier * a.cost;
    r.gap = multiplier * (a.cost - a_star.cost);
    if (cfg.record_wall_time) r.wall_ms = detail::elapsed_ms(t_start);
    h.iters.push_back(std::move(r));
  };
  record(0);

  for (int n = 1; n <= cfg.N_outer; ++n) {
    Mat E_hat;
    double critic_err = std::nan(""), delta_err = std::nan("");
    if (cfg.mode == CriticMode::Oracle) {
      E_hat = a.E;
    } else {
      RngStream rng(cfg.seed, mix_stream(base_stream, std::uint64_t(n)));
      CriticOutput co = gtd_evaluate(inst, {K, h.sigma}, gcfg, rng, C0);
      E_hat = co.E_hat;
      critic_err = (co.E_hat - a.E).norm();
      delta_err = co.delta_err.value_or(std::nan(""));
      if (cfg.warm_start) {
        gcfg.gamma1_init = co.C_hat;
        gcfg.gamma2_init = co.delta_hat;
      }
    }
    const Mat K_next = natural_step(K, E_hat, h.eta);
    const double prev_cost = a.cost;
    if (!is_stable(inst, K_next)) {
      h.aborted = true;
      h.abort_reason = "gain left the stable region at iteration " + std::to_string(n) + " (spectral radius " +
                       std::to_string(closed_loop_radius(inst, K_next)) + ")";
      h.iters.back().critic_err = critic_err;
      h.iters.back().delta_err = delta_err;
      break;
    }
    K = K_next;
    a = analyze_policy(inst, {K, h.sigma});
    record(n);
    auto& r = h.iters.back();
    r.critic_err = critic_err;
    r.delta_err = delta_err;
    if (cfg.mode == CriticMode::Oracle) {
      const double gap_prev = prev_cost - a_star.cost, gap_now = a.cost - a_star.cost;
      r.monotone_ok = a.cost <= prev_cost + kOracleStepSlack;
      r.contraction_ok = gap_now <= h.contraction * gap_prev + kOracleStepSlack;
      if (cfg.enforce_oracle_bounds && !(r.monotone_ok && r.contraction_ok)) {
        throw IntegrityError("train_single(" + h.id + "): oracle step " + std::to_string(n) +
                             " violates the " + (r.monotone_ok ? "contraction" : "monotonicity") + " bound");
      }
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Hierarchical training

struct AuxiliaryProblem {
  std::string id;
  LQRInstance inst;
  int subpopulation = -1;  // -1 for the mean-field system
  double multiplier = 1.0;
};

/// The trainable systems: every non-singleton subpopulation, then the mean field.
inline std::vector<AuxiliaryProblem> auxiliary_problems(const AuxiliaryEnsemble& ens) {
  std::vector<AuxiliaryProblem> out;
  for (int l = 0; l < ens.partition.L(); ++l) {
    const auto& s = ens.subsystems[l];
    if (s.degenerate()) continue;
    out.push_back({"S" + std::to_string(l + 1), LQRInstance{s.A, s.B, s.Q, s.R, s.Phi}, l, double(s.n_agents)});
  }
  const auto& mf = ens.mean_field;
  out.push_back({"MF", LQRInstance{mf.A_bar, mf.B_bar, mf.Q_eff, mf.R_eff, mf.Phi_bar}, -1, 1.0});
  return out;
}

struct ComposedCheck {
  int n = 0;
  double composed_cost = 0.0;
  double sum_of_parts = 0.0;
  double rel_err = 0.0;
};

struct TrainHistory {
  std::vector<SystemHistory> systems;
  std::vector<double> total_gap;   // per iteration, sum over systems
  std::vector<double> total_cost;
  std::vector<ComposedCheck> composed_checks;
  double M = 0.0;
  bool aborted = false;
  std::string abort_system;
  std::string abort_reason;
};

inline constexpr double kComposedCostTol = 1e-6;

/// Noise-free global cost of the composed gain versus the sum of the
/// noise-free auxiliary costs (each deviation system counted once per agent).
inline ComposedCheck composed_cost_check(const GlobalLQRSystem& sys, const AuxiliaryEnsemble& ens,
                                         const std::vector<Mat>& K_sub, const Mat& K_bar) {
  const Mat G = compose_global_policy(ens, K_sub, K_bar);
  const LQRInstance global{sys.A, sys.B, sys.Q, sys.R, global_noise_covariance(sys)};
  ComposedCheck c;
  c.composed_cost = analyze_policy(global, {G, 0.0}).cost;
  for (const auto& prob : auxiliary_problems(ens)) {
    const Mat& K = prob.subpopulation >= 0 ? K_sub[prob.subpopulation] : K_bar;
    c.sum_of_parts += prob.multiplier * analyze_policy(prob.inst, {K, 0.0}).cost;
  }
  c.rel_err = std::abs(c.composed_cost - c.sum_of_parts) / std::max(std::abs(c.composed_cost), 1e-300);
  return c;
}

inline int thread_cap(std::size_t jobs) {
  int cap = static_cast<int>(jobs);
  if (const char* env = std::getenv("HIERLQR_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) cap = std::min(cap, v);
  }
  return std::max(cap, 1);
}

struct HierarchicalInit {
  std::vector<Mat> K_sub;  // one per subpopulation (ignored for singletons)
  Mat K_bar;
};

inline HierarchicalInit zero_gains(const SubpopulationPartition& p) {
  HierarchicalInit g;
  for (int l = 0; l < p.L(); ++l) g.K_sub.push_back(Mat::Zero(p.action_dims[l], p.state_dims[l]));
  g.K_bar = Mat::Zero(p.mean_action_dim(), p.mean_state_dim());
  return g;
}

/// Trains the auxiliary systems independently (in parallel, capped by
/// HIERLQR_THREADS) and aggregates their histories. Results do not depend
/// on the thread count: every system owns its random streams.
inline TrainHistory train_hierarchical(const GlobalLQRSystem& sys, const AuxiliaryEnsemble& ens,
                                       const HierarchicalInit& init, const TrainConfig& cfg) {
  const auto problems = auxiliary_problems(ens);
  cfg.validate(problems.size());
  if (static_cast<int>(init.K_sub.size()) != ens.partition.L()) {
    throw DimensionError("train_hierarchical: one initial gain per subpopulation required");
  }
  std::vector<std::optional<SystemHistory>> results(problems.size());
  std::vector<std::exception_ptr> errors(problems.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < problems.size(); i = next++) {
      const auto& prob = problems[i];
      const Mat& K0 = prob.subpopulation >= 0 ? init.K_sub[prob.subpopulation] : init.K_bar;
      try {
        results[i] = train_single(prob.inst, K0, cfg, i, prob.id, prob.multiplier);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int nthreads = thread_cap(problems.size());
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (errors[i]) detail::rethrow_tagged(errors[i], "system " + problems[i].id + ": ");
  }

  TrainHistory th;
  for (auto& r : results) th.systems.push_back(std::move(*r));
  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& s : th.systems) {
    len = std::min(len, s.iters.size());
    th.M = std::max(th.M, s.M_term);
    if (s.aborted && !th.aborted) {
      th.aborted = true;
      th.abort_system = s.id;
      th.abort_reason = s.abort_reason;
    }
  }
  for (std::size_t n = 0; n < len; ++n) {
    double g = 0.0, c = 0.0;
    for (const auto& s : th.systems) {
      g += s.iters[n].gap;
      c += s.iters[n].cost;
    }
    th.total_gap.push_back(g);
    th.total_cost.push_back(c);
  }

  auto gains_at = [&](std::size_t n) {
    HierarchicalInit g = init;
    for (std::size_t i = 0; i < problems.size(); ++i) {
      const Mat& K = th.systems[i].iters[n].K;
      if (problems[i].subpopulation >= 0) {
        g.K_sub[problems[i].subpopulation] = K;
      } else {
        g.K_bar = K;
      }
    }
    return g;
  };
  for (std::size_t n : {std::size_t{0}, len - 1}) {
    const HierarchicalInit g = gains_at(n);
    ComposedCheck c = composed_cost_check(sys, ens, g.K_sub, g.K_bar);
    c.n = static_cast<int>(n);
    if (c.rel_err > kComposedCostTol) {
      throw IntegrityError("train_hierarchical: composed global cost " + format_double(c.composed_cost) +
                           " differs from the sum of auxiliary costs " + format_double(c.sum_of_parts));
    }
    th.composed_checks.push_back(c);
    if (len == 1) break;
  }
  return th;
}

/// Final composed gain of a hierarchical run.
inline Mat final_global_gain(const AuxiliaryEnsemble& ens, const HierarchicalInit& init, const TrainHistory& th) {
  HierarchicalInit g = init;
  const auto problems = auxiliary_problems(ens);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const Mat& K = th.systems[i].iters.back().K;
    if (problems[i].subpopulation >= 0) {
      g.K_sub[problems[i].subpopulation] = K;
    } else {
      g.K_bar = K;
    }
  }
  return compose_global_policy(ens, g.K_sub, g.K_bar);
}

inline void write_history_csv(std::ostream& os, const TrainHistory& th) {
  os << "n,system_id,cost,gap,critic_err,eta,wall_ms\n";
  auto opt = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  const std::size_t len = th.total_gap.size();
  for (std::size_t n = 0; n < len; ++n) {
    for (const auto& s : th.systems) {
      const auto& r = s.iters[n];
      os << n << ',' << s.id << ',' << format_double(r.cost) << ',' << format_double(r.gap) << ','
         << opt(r.critic_err) << ',' << format_double(s.eta) << ',' << format_double(r.wall_ms) << '\n';
    }
    os << n << ",total," << format_double(th.total_cost[n]) << ',' << format_double(th.total_gap[n]) << ",,,0\n";
  }
}

}  // namespace hierlqr
