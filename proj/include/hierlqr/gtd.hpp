#pragma once

// Projected primal-dual gradient temporal-difference critic. Estimates the
// average cost C(K) and the value vector of a linear Gaussian policy from a
// single trajectory, and recovers the natural gradient from the estimate.

#include <cmath>
#include <optional>
#include <ostream>
#include <vector>

#include "hierlqr/errors.hpp"
#include "hierlqr/format.hpp"
#include "hierlqr/matlin.hpp"
#include "hierlqr/oracle.hpp"
#include "hierlqr/rng.hpp"
#include "hierlqr/sim.hpp"

namespace hierlqr {

struct GTDRadii {
  double Gamma1 = 0.0;
  double Gamma2 = 0.0;
  double Xi1 = 0.0;
  double Xi2 = 0.0;
};

enum class StationaryStart { Oracle, BurnIn };

struct GTDConfig {
  int T_inner = 100000;
  double alpha = 0.1;
  double xi2_constant = 10.0;
  std::optional<GTDRadii> radii;  // overrides the default formulas
  StationaryStart start = StationaryStart::Oracle;
  // Initial primal point; zero when absent. Must lie in the primal set.
  std::optional<double> gamma1_init;
  std::optional<Vec> gamma2_init;
  int diagnostics_every = 0;  // 0 disables the per-step diagnostics trace

  void validate() const {
    if (T_inner < 1) throw ConfigError("gtd: T_inner must be positive");
    if (!(alpha > 0.0)) throw ConfigError("gtd: alpha must be positive");
    if (!(xi2_constant > 0.0)) throw ConfigError("gtd: xi2_constant must be positive");
    if (radii && !(radii->Gamma1 > 0.0 && radii->Gamma2 > 0.0 && radii->Xi1 > 0.0 && radii->Xi2 > 0.0)) {
      throw ConfigError("gtd: radii must be positive");
    }
    if (diagnostics_every < 0) throw ConfigError("gtd: diagnostics_every must be non-negative");
  }
};

/// Gamma1 = Xi1 = C(K0);
/// Gamma2 = ||Q||_F + ||R||_F + sqrt(d) / sigma_min(Phi) (||A||_F^2 + ||B||_F^2) C(K0);
/// Xi2 = c (1 + ||K||_F^2)^2 Gamma2 sigma_min(Q)^-2 C(K0)^2.
inline GTDRadii default_radii(const LQRInstance& inst, const LinearGaussianPolicy& pol, double C_K0,
                              double xi2_constant) {
  if (!(C_K0 > 0.0)) throw ConfigError("default_radii: C(K0) must be positive");
  GTDRadii r;
  r.Gamma1 = C_K0;
  r.Xi1 = C_K0;
  const double sd = std::sqrt(double(inst.state_dim()));
  r.Gamma2 = inst.Q.norm() + inst.R.norm() +
             sd / sigma_min(inst.Phi) * (inst.A.squaredNorm() + inst.B.squaredNorm()) * C_K0;
  const double kf = 1.0 + pol.K.squaredNorm();
  const double sq = sigma_min(inst.Q);
  r.Xi2 = xi2_constant * kf * kf * r.Gamma2 / (sq * sq) * C_K0 * C_K0;
  return r;
}

struct Feasibility {
  bool holds = false;
  double delta_norm = 0.0;
  double cost = 0.0;
};

/// Whether the saddle point (C(K), delta*) lies in the primal set.
inline Feasibility radii_feasible(const GTDRadii& r, const ValueVector& vv) {
  Feasibility f;
  f.delta_norm = vv.delta_star.norm();
  f.cost = vv.cost;
  f.holds = f.delta_norm <= r.Gamma2 && vv.cost <= r.Gamma1;
  return f;
}

struct ProjectionHits {
  long gamma1 = 0;
  long gamma2 = 0;
  long xi1 = 0;
  long xi2 = 0;

  long total() const { return gamma1 + gamma2 + xi1 + xi2; }
};

struct GTDTracePoint {
  int t = 0;
  double gamma1 = 0.0;
  double err_delta = std::nan("");
  long proj_hits = 0;
};

struct CriticOutput {
  double C_hat = 0.0;
  Vec delta_hat;
  Mat E_hat;
  GTDRadii radii;
  ProjectionHits hits;
  // Final iterate, usable as the initial point of a later evaluation.
  double gamma1_last = 0.0;
  Vec gamma2_last;
  // Filled when the oracle is available.
  std::optional<double> delta_err;
  std::optional<double> cost_err;
  std::optional<double> E_err;
  std::optional<Feasibility> feasibility;
  std::vector<GTDTracePoint> trace;
};

namespace detail {

inline double clamp_scalar(double v, double lo, double hi, long& hits) {
  if (v < lo) {
    ++hits;
    return lo;
  }
  if (v > hi) {
    ++hits;
    return hi;
  }
  return v;
}

inline void project_ball(Vec& v, double radius, long& hits) {
  const double n = v.norm();
  if (n > radius) {
    ++hits;
    v *= radius / n;
  }
}

}  // namespace detail

/// One trajectory of length T_inner from the stationary law; updates with
/// step alpha / sqrt(t), projection after every step and step-weighted
/// averaging of the primal iterates. `C_K0` feeds the default radii; when
/// absent the oracle cost of the evaluated policy is used.
inline CriticOutput gtd_evaluate(const LQRInstance& inst, const LinearGaussianPolicy& pol, const GTDConfig& cfg,
                                 RngStream& rng, std::optional<double> C_K0 = std::nullopt,
                                 bool use_oracle_diagnostics = true) {
  cfg.validate();
  inst.check_dims();
  if (!(pol.sigma > 0.0)) throw ConfigError("gtd_evaluate: exploration scale must be positive");
  require_stable(inst, pol.K, "gtd_evaluate");
  const Index d = inst.state_dim(), k = inst.action_dim(), m = svec_dim(d + k);

  std::optional<ValueVector> vv;
  if (use_oracle_diagnostics || !C_K0 || cfg.start == StationaryStart::Oracle) vv = value_vector(inst, pol);

  CriticOutput out;
  out.radii = cfg.radii ? *cfg.radii : default_radii(inst, pol, C_K0 ? *C_K0 : vv->cost, cfg.xi2_constant);
  const GTDRadii& rad = out.radii;
  if (vv && use_oracle_diagnostics) out.feasibility = radii_feasible(rad, *vv);

  double g1 = cfg.gamma1_init.value_or(0.0);
  Vec g2 = cfg.gamma2_init ? *cfg.gamma2_init : Vec::Zero(m);
  if (g2.size() != m) throw DimensionError("gtd_evaluate: gamma2_init has wrong dimension");
  {
    long ignored = 0;
    g1 = detail::clamp_scalar(g1, 0.0, rad.Gamma1, ignored);
    detail::project_ball(g2, rad.Gamma2, ignored);
  }
  double x1 = 0.0;
  Vec x2 = Vec::Zero(m);

  Vec x;
  if (cfg.start == StationaryStart::Oracle) {
    x = sample_gaussian(rng, psd_factor(analyze_policy(inst, pol).Sigma));
  } else {
    x = burn_in_state(inst, pol, rng);
  }
  const Mat Lw = psd_factor(inst.Phi);
  auto act = [&](const Vec& s) -> Vec { return -pol.K * s + pol.sigma * rng.normal_vector(k); };

  Vec u = act(x);
  Vec v(d + k);
  v << x, u;
  Vec phi = feature(v);

  double wsum = 0.0, c_acc = 0.0;
  Vec d_acc = Vec::Zero(m);
  Vec dphi(m), v_next(d + k);
  for (int t = 1; t <= cfg.T_inner; ++t) {
    const double c = x.dot(inst.Q * x) + u.dot(inst.R * u);
    Vec x_next = inst.A * x + inst.B * u + sample_gaussian(rng, Lw);
    Vec u_next = act(x_next);
    v_next << x_next, u_next;
    Vec phi_next = feature(v_next);

    const double a = cfg.alpha / std::sqrt(double(t));
    dphi = phi - phi_next;
    const double px = phi.dot(x2);
    const double dg = dphi.dot(g2);
    const double g1_new = g1 - a * (x1 + px);
    Vec g2_new = g2 - (a * px) * dphi;
    const double x1_new = x1 + a * (g1 - c - x1);
    Vec x2_new = x2 + a * ((g1 + dg - c) * phi - x2);

    g1 = detail::clamp_scalar(g1_new, 0.0, rad.Gamma1, out.hits.gamma1);
    g2 = std::move(g2_new);
    detail::project_ball(g2, rad.Gamma2, out.hits.gamma2);
    x1 = detail::clamp_scalar(x1_new, -rad.Xi1, rad.Xi1, out.hits.xi1);
    x2 = std::move(x2_new);
    detail::project_ball(x2, rad.Xi2, out.hits.xi2);

    wsum += a;
    c_acc += a * g1;
    d_acc += a * g2;

    if (cfg.diagnostics_every > 0 && (t % cfg.diagnostics_every == 0 || t == cfg.T_inner)) {
      GTDTracePoint tp;
      tp.t = t;
      tp.gamma1 = g1;
      if (vv && use_oracle_diagnostics) tp.err_delta = (d_acc / wsum - vv->delta_star).norm() / vv->delta_star.norm();
      tp.proj_hits = out.hits.total();
      out.trace.push_back(tp);
    }

    x = std::move(x_next);
    u = std::move(u_next);
    phi = std::move(phi_next);
  }

  out.C_hat = c_acc / wsum;
  out.delta_hat = d_acc / wsum;
  out.E_hat = recover_natural_gradient(out.delta_hat, pol.K);
  out.gamma1_last = g1;
  out.gamma2_last = g2;
  if (vv && use_oracle_diagnostics) {
    out.delta_err = (out.delta_hat - vv->delta_star).norm() / vv->delta_star.norm();
    out.cost_err = std::abs(out.C_hat - vv->cost) / vv->cost;
    out.E_err = (out.E_hat - recover_natural_gradient(vv->delta_star, pol.K)).norm();
  }
  return out;
}

inline void write_gtd_trace_csv(std::ostream& os, const std::vector<GTDTracePoint>& trace) {
  os << "t,gamma1,err_delta,proj_hits\n";
  for (const auto& p : trace) {
    os << p.t << ',' << format_double(p.gamma1) << ',';
    if (!std::isnan(p.err_delta)) os << format_double(p.err_delta);
    os << ',' << p.proj_hits << '\n';
  }
}

}  // namespace hierlqr
