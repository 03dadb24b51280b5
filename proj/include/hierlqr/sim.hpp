#pragma once

// Seeded rollouts of single LQR chains and of the original global system
// under hierarchical policies.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <vector>

#include "hierlqr/decomp.hpp"
#include "hierlqr/format.hpp"
#include "hierlqr/oracle.hpp"
#include "hierlqr/rng.hpp"
#include "hierlqr/sysmodel.hpp"

namespace hierlqr {

struct Trajectory {
  std::vector<Vec> states;
  std::vector<Vec> actions;
  std::vector<double> costs;

  std::size_t length() const { return costs.size(); }

  double average_cost(std::size_t skip = 0) const {
    if (skip >= costs.size()) return 0.0;
    double s = 0.0;
    for (std::size_t t = skip; t < costs.size(); ++t) s += costs[t];
    return s / double(costs.size() - skip);
  }
};

/// Gaussian sample with covariance L L^T.
inline Vec sample_gaussian(RngStream& rng, const Mat& L) { return L * rng.normal_vector(L.cols()); }

inline int burn_in_steps(double rho) {
  const double steps = rho < 1.0 ? 10.0 / (1.0 - rho) : 1e7;
  return static_cast<int>(std::max(100.0, std::ceil(steps)));
}

/// x_{t+1} = A x_t + B u_t + w_t with u_t = -K x_t + sigma z_t. Without `x0`
/// the chain starts from its stationary law N(0, Sigma_K).
inline Trajectory rollout(const LQRInstance& inst, const LinearGaussianPolicy& pol, int T, RngStream& rng,
                          const std::optional<Vec>& x0 = std::nullopt) {
  inst.check_dims();
  if (T < 1) throw ConfigError("rollout: horizon must be at least 1");
  Vec x;
  if (x0) {
    if (x0->size() != inst.state_dim()) throw DimensionError("rollout: x0 has wrong dimension");
    if (pol.K.rows() != inst.action_dim() || pol.K.cols() != inst.state_dim()) {
      throw DimensionError("rollout: gain has wrong shape");
    }
    x = *x0;
  } else {
    const PolicyAnalysis a = analyze_policy(inst, pol);
    x = sample_gaussian(rng, psd_factor(a.Sigma));
  }
  const Mat Lw = psd_factor(inst.Phi);
  Trajectory tr;
  tr.states.reserve(T);
  tr.actions.reserve(T);
  tr.costs.reserve(T);
  for (int t = 0; t < T; ++t) {
    Vec u = -pol.K * x;
    if (pol.sigma != 0.0) u += pol.sigma * rng.normal_vector(inst.action_dim());
    tr.costs.push_back(x.dot(inst.Q * x) + u.dot(inst.R * u));
    Vec next = inst.A * x + inst.B * u + sample_gaussian(rng, Lw);
    tr.states.push_back(std::move(x));
    tr.actions.push_back(std::move(u));
    x = std::move(next);
  }
  return tr;
}

/// Runs the chain from zero for burn_in_steps(rho) steps and returns the final state.
inline Vec burn_in_state(const LQRInstance& inst, const LinearGaussianPolicy& pol, RngStream& rng) {
  const double rho = closed_loop_radius(inst, pol.K);
  const int n = burn_in_steps(rho);
  Trajectory tr = rollout(inst, pol, n + 1, rng, Vec::Zero(inst.state_dim()));
  return tr.states.back();
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const Index nx = tr.states.empty() ? 0 : tr.states.front().size();
  const Index nu = tr.actions.empty() ? 0 : tr.actions.front().size();
  os << "t";
  for (Index i = 0; i < nx; ++i) os << ",x" << i;
  for (Index i = 0; i < nu; ++i) os << ",u" << i;
  os << ",cost\n";
  for (std::size_t t = 0; t < tr.length(); ++t) {
    os << t;
    for (Index i = 0; i < nx; ++i) os << ',' << format_double(tr.states[t](i));
    for (Index i = 0; i < nu; ++i) os << ',' << format_double(tr.actions[t](i));
    os << ',' << format_double(tr.costs[t]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Hierarchical simulation of the original system

struct HierarchicalPolicy {
  std::vector<LinearGaussianPolicy> subsystems;  // one per subpopulation
  LinearGaussianPolicy mean_field;
};

struct HierarchicalTrajectory {
  Trajectory global;
  std::vector<Trajectory> tilde;  // per subpopulation: stacked deviations, cost c~^l
  Trajectory mean_field;          // (xbar, ubar, cbar)
};

namespace detail {

inline Vec stack_agents(const std::vector<Vec>& parts) {
  Index n = 0;
  for (const auto& p : parts) n += p.size();
  Vec out(n);
  Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

inline void check_policy_shapes(const AuxiliaryEnsemble& ens, const HierarchicalPolicy& pol) {
  const auto& p = ens.partition;
  if (static_cast<int>(pol.subsystems.size()) != p.L()) {
    throw DimensionError("hierarchical policy: one subsystem policy per subpopulation required");
  }
  for (int l = 0; l < p.L(); ++l) {
    if (pol.subsystems[l].K.rows() != p.action_dims[l] || pol.subsystems[l].K.cols() != p.state_dims[l]) {
      throw DimensionError("hierarchical policy: K_" + std::to_string(l + 1) + " has wrong shape");
    }
  }
  if (pol.mean_field.K.rows() != p.mean_action_dim() || pol.mean_field.K.cols() != p.mean_state_dim()) {
    throw DimensionError("hierarchical policy: mean-field gain has wrong shape");
  }
}

// Deviation actions -K_l x~^i + sigma_l z^i re-centered to zero mean, plus
// mean-field action -K_bar xbar + sigma_bar z_bar, all in auxiliary coordinates.
inline void hierarchical_actions(const AuxiliaryEnsemble& ens, const HierarchicalPolicy& pol, CoordinateBundle& c,
                                 RngStream& rng) {
  const auto& p = ens.partition;
  for (int l = 0; l < p.L(); ++l) {
    const int n = p.sizes[l], k = p.action_dims[l];
    const auto& sp = pol.subsystems[l];
    Vec mean = Vec::Zero(k);
    for (int i = 0; i < n; ++i) {
      Vec u = -sp.K * c.x_tilde[l][i];
      if (sp.sigma != 0.0) u += sp.sigma * rng.normal_vector(k);
      mean += u;
      c.u_tilde[l][i] = std::move(u);
    }
    mean /= n;
    for (int i = 0; i < n; ++i) c.u_tilde[l][i] -= mean;
  }
  c.u_bar = -pol.mean_field.K * c.x_bar;
  if (pol.mean_field.sigma != 0.0) c.u_bar += pol.mean_field.sigma * rng.normal_vector(p.mean_action_dim());
}

inline Vec global_noise(const GlobalLQRSystem& sys, const std::vector<Mat>& factors, RngStream& rng) {
  const auto& p = sys.partition;
  Vec w(p.total_state_dim());
  for (int l = 0; l < p.L(); ++l)
    for (int i = 0; i < p.sizes[l]; ++i)
      w.segment(p.agent_state_offset(l, i), p.state_dims[l]) = sample_gaussian(rng, factors[l]);
  return w;
}

}  // namespace detail

inline constexpr double kStepDecompositionTol = 1e-8;

/// Simulates the original recursion with actions produced in auxiliary
/// coordinates. Each step checks c_gt = cbar + sum_l c~^l.
inline HierarchicalTrajectory hierarchical_rollout(const GlobalLQRSystem& sys, const AuxiliaryEnsemble& ens,
                                                   const HierarchicalPolicy& pol, int T, RngStream& rng,
                                                   const std::optional<Vec>& x0 = std::nullopt) {
  detail::check_policy_shapes(ens, pol);
  if (T < 1) throw ConfigError("hierarchical_rollout: horizon must be at least 1");
  const auto& p = sys.partition;
  std::vector<Mat> factors;
  for (const auto& W : sys.W_noise) factors.push_back(psd_factor(W));
  Vec x = x0 ? *x0 : Vec::Zero(p.total_state_dim());
  if (x.size() != p.total_state_dim()) throw DimensionError("hierarchical_rollout: x0 has wrong dimension");
  HierarchicalTrajectory out;
  out.tilde.resize(p.L());
  for (int t = 0; t < T; ++t) {
    CoordinateBundle c = to_coordinates(p, x, Vec::Zero(p.total_action_dim()));
    detail::hierarchical_actions(ens, pol, c, rng);
    const GlobalPoint g = recover_coordinates(c);
    const double cost = global_cost(sys, g.x, g.u);
    const CoordinateBundle cu = to_coordinates(p, g.x, g.u);
    const AuxiliaryCosts ac = auxiliary_costs(ens, cu);
    if (std::abs(cost - ac.total()) > kStepDecompositionTol * (1.0 + std::abs(cost))) {
      throw IntegrityError("hierarchical_rollout: cost decomposition failed at step " + std::to_string(t));
    }
    out.global.states.push_back(g.x);
    out.global.actions.push_back(g.u);
    out.global.costs.push_back(cost);
    for (int l = 0; l < p.L(); ++l) {
      out.tilde[l].states.push_back(detail::stack_agents(cu.x_tilde[l]));
      out.tilde[l].actions.push_back(detail::stack_agents(cu.u_tilde[l]));
      out.tilde[l].costs.push_back(ac.c_tilde[l]);
    }
    out.mean_field.states.push_back(cu.x_bar);
    out.mean_field.actions.push_back(cu.u_bar);
    out.mean_field.costs.push_back(ac.c_bar);
    x = sys.A * g.x + sys.B * g.u + detail::global_noise(sys, factors, rng);
  }
  return out;
}

struct CouplingResult {
  double max_deviation = 0.0;  // largest |difference| between the two views
  double max_magnitude = 0.0;  // largest |state entry| seen
  int steps = 0;
};

/// Drives (a) the global recursion and (b) the L+1 auxiliary recursions with
/// one shared realization of process and exploration noise, and compares
/// the transformed global states with the auxiliary states.
inline CouplingResult pathwise_coupling(const GlobalLQRSystem& sys, const AuxiliaryEnsemble& ens,
                                        const HierarchicalPolicy& pol, int T, RngStream& rng, const Vec& x0) {
  detail::check_policy_shapes(ens, pol);
  const auto& p = sys.partition;
  std::vector<Mat> factors;
  for (const auto& W : sys.W_noise) factors.push_back(psd_factor(W));
  Vec x = x0;
  CoordinateBundle aux = to_coordinates(p, x0, Vec::Zero(p.total_action_dim()));
  CouplingResult res;
  res.steps = T;
  for (int t = 0; t < T; ++t) {
    // Exploration noise is drawn once in auxiliary coordinates and shared.
    CoordinateBundle noise = to_coordinates(p, Vec::Zero(p.total_state_dim()), Vec::Zero(p.total_action_dim()));
    HierarchicalPolicy zero_gain = pol;
    for (auto& s : zero_gain.subsystems) s.K.setZero();
    zero_gain.mean_field.K.setZero();
    detail::hierarchical_actions(ens, zero_gain, noise, rng);
    const Vec w = detail::global_noise(sys, factors, rng);
    const CoordinateBundle wc = to_coordinates(p, w, Vec::Zero(p.total_action_dim()));

    // (a) global recursion
    CoordinateBundle gc = to_coordinates(p, x, Vec::Zero(p.total_action_dim()));
    for (int l = 0; l < p.L(); ++l)
      for (int i = 0; i < p.sizes[l]; ++i)
        gc.u_tilde[l][i] = -pol.subsystems[l].K * gc.x_tilde[l][i] + noise.u_tilde[l][i];
    gc.u_bar = -pol.mean_field.K * gc.x_bar + noise.u_bar;
    const GlobalPoint g = recover_coordinates(gc);
    x = sys.A * g.x + sys.B * g.u + w;

    // (b) auxiliary recursions
    for (int l = 0; l < p.L(); ++l) {
      const auto& s = ens.subsystems[l];
      for (int i = 0; i < p.sizes[l]; ++i) {
        const Vec u = -pol.subsystems[l].K * aux.x_tilde[l][i] + noise.u_tilde[l][i];
        aux.x_tilde[l][i] = s.A * aux.x_tilde[l][i] + s.B * u + wc.x_tilde[l][i];
      }
    }
    const Vec ubar = -pol.mean_field.K * aux.x_bar + noise.u_bar;
    aux.x_bar = ens.mean_field.A_bar * aux.x_bar + ens.mean_field.B_bar * ubar + wc.x_bar;

    const CoordinateBundle now = to_coordinates(p, x, Vec::Zero(p.total_action_dim()));
    res.max_deviation = std::max(res.max_deviation, (now.x_bar - aux.x_bar).cwiseAbs().maxCoeff());
    res.max_magnitude = std::max(res.max_magnitude, x.cwiseAbs().maxCoeff());
    for (int l = 0; l < p.L(); ++l)
      for (int i = 0; i < p.sizes[l]; ++i)
        res.max_deviation =
            std::max(res.max_deviation, (now.x_tilde[l][i] - aux.x_tilde[l][i]).cwiseAbs().maxCoeff());
  }
  return res;
}

}  // namespace hierlqr
