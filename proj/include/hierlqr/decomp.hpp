#pragma once

// Decomposition of a partially exchangeable system into L representative
// agent systems plus one mean-field system, the coordinate transform between
// the two views, and composition of auxiliary gains into a global gain.

#include <string>
#include <vector>

#include "hierlqr/errors.hpp"
#include "hierlqr/matlin.hpp"
#include "hierlqr/sysmodel.hpp"

namespace hierlqr {

/// Representative blocks read from the first agents of each subpopulation.
/// Indexing: a[l], abar[l][k], etc.
struct ExchangeableBlocks {
  std::vector<Mat> a, b, q, r;
  std::vector<std::vector<Mat>> abar, bbar, qbar, rbar;
};

inline ExchangeableBlocks extract_blocks(const GlobalLQRSystem& sys, double tol = kExchangeabilityTol) {
  auto rep = verify_partial_exchangeability(sys, tol);
  if (!rep.holds) throw ExchangeabilityError(std::move(rep));
  const auto& p = sys.partition;
  const int L = p.L();
  ExchangeableBlocks out;
  auto init = [&](std::vector<std::vector<Mat>>& v) { v.assign(L, std::vector<Mat>(L)); };
  init(out.abar);
  init(out.bbar);
  init(out.qbar);
  init(out.rbar);
  for (int l = 0; l < L; ++l) {
    const Index xs = p.agent_state_offset(l, 0), us = p.agent_action_offset(l, 0);
    const int d = p.state_dims[l], k = p.action_dims[l];
    out.a.push_back(sys.A.block(xs, xs, d, d));
    out.b.push_back(sys.B.block(xs, us, d, k));
    out.q.push_back(sys.Q.block(xs, xs, d, d));
    out.r.push_back(sys.R.block(us, us, k, k));
    for (int m = 0; m < L; ++m) {
      const int dm = p.state_dims[m], km = p.action_dims[m];
      if (m == l && p.sizes[l] == 1) {
        out.abar[l][m] = Mat::Zero(d, dm);
        out.bbar[l][m] = Mat::Zero(d, km);
        out.qbar[l][m] = Mat::Zero(d, dm);
        out.rbar[l][m] = Mat::Zero(k, km);
        continue;
      }
      const int j = (m == l) ? 1 : 0;
      const Index xo = p.agent_state_offset(m, j), uo = p.agent_action_offset(m, j);
      out.abar[l][m] = sys.A.block(xs, xo, d, dm);
      out.bbar[l][m] = sys.B.block(xs, uo, d, km);
      out.qbar[l][m] = sys.Q.block(xs, xo, d, dm);
      out.rbar[l][m] = sys.R.block(us, uo, k, km);
    }
  }
  return out;
}

struct AuxiliarySubsystem {
  Mat A;
  Mat B;
  SymMat Q;
  SymMat R;
  SymMat Phi;
  int n_agents = 1;

  /// A singleton subpopulation has identically zero deviation state.
  bool degenerate() const { return n_agents == 1; }
};

struct MeanFieldSystem {
  Mat A_bar;
  Mat B_bar;
  SymMat Q_eff;
  SymMat R_eff;
  SymMat Phi_bar;
};

struct AuxiliaryEnsemble {
  std::vector<AuxiliarySubsystem> subsystems;
  MeanFieldSystem mean_field;
  SubpopulationPartition partition;
};

namespace detail {

inline void require_psd(const SymMat& M, const std::string& name) {
  const double lam = min_eigenvalue(M);
  if (lam < -1e-12 * std::max(1.0, M.norm())) throw AssumptionError(name, lam);
}

}  // namespace detail

inline AuxiliaryEnsemble build_auxiliary(const GlobalLQRSystem& sys, double tol = kExchangeabilityTol) {
  const ExchangeableBlocks blk = extract_blocks(sys, tol);
  const auto& p = sys.partition;
  const int L = p.L();
  AuxiliaryEnsemble ens;
  ens.partition = p;

  for (int l = 0; l < L; ++l) {
    AuxiliarySubsystem s;
    s.n_agents = p.sizes[l];
    s.A = blk.a[l] - blk.abar[l][l];
    s.B = blk.b[l] - blk.bbar[l][l];
    s.Q = SymMat::symmetrized(blk.q[l] - blk.qbar[l][l]);
    s.R = SymMat::symmetrized(blk.r[l] - blk.rbar[l][l]);
    s.Phi = SymMat::symmetrized((1.0 - 1.0 / p.sizes[l]) * sys.W_noise[l].mat());
    if (!s.degenerate()) {
      detail::require_psd(s.Q, "Q_" + std::to_string(l + 1));
      detail::require_psd(s.R, "R_" + std::to_string(l + 1));
    }
    ens.subsystems.push_back(std::move(s));
  }

  const Index dbar = p.mean_state_dim(), kbar = p.mean_action_dim();
  Mat Abar = Mat::Zero(dbar, dbar), Bbar = Mat::Zero(dbar, kbar);
  Mat Qeff = Mat::Zero(dbar, dbar), Reff = Mat::Zero(kbar, kbar);
  std::vector<Mat> phi_blocks;
  for (int l = 0; l < L; ++l) {
    const Index xl = p.mean_state_offset(l), ul = p.mean_action_offset(l);
    const int dl = p.state_dims[l], kl = p.action_dims[l];
    const double nl = p.sizes[l];
    for (int m = 0; m < L; ++m) {
      const Index xm = p.mean_state_offset(m), um = p.mean_action_offset(m);
      const int dm = p.state_dims[m], km = p.action_dims[m];
      const double nm = p.sizes[m];
      Abar.block(xl, xm, dl, dm) = nm * blk.abar[l][m];
      Bbar.block(xl, um, dl, km) = nm * blk.bbar[l][m];
      Qeff.block(xl, xm, dl, dm) = nl * nm * blk.qbar[l][m];
      Reff.block(ul, um, kl, km) = nl * nm * blk.rbar[l][m];
    }
    const auto& s = ens.subsystems[l];
    Abar.block(xl, xl, dl, dl) += s.A;
    Bbar.block(xl, ul, dl, kl) += s.B;
    Qeff.block(xl, xl, dl, dl) += nl * s.Q.mat();
    Reff.block(ul, ul, kl, kl) += nl * s.R.mat();
    phi_blocks.push_back(sys.W_noise[l].mat() / nl);
  }
  ens.mean_field.A_bar = std::move(Abar);
  ens.mean_field.B_bar = std::move(Bbar);
  ens.mean_field.Q_eff = SymMat::symmetrized(Qeff);
  ens.mean_field.R_eff = SymMat::symmetrized(Reff);
  ens.mean_field.Phi_bar = SymMat::symmetrized(block_diag(phi_blocks));
  detail::require_psd(ens.mean_field.Q_eff, "Q_eff");
  detail::require_psd(ens.mean_field.R_eff, "R_eff");
  return ens;
}

// ---------------------------------------------------------------------------
// Coordinates

struct CoordinateBundle {
  std::vector<std::vector<Vec>> x_tilde;  // [l][i]
  std::vector<std::vector<Vec>> u_tilde;
  Vec x_bar;  // stacked subpopulation means
  Vec u_bar;
  SubpopulationPartition partition;
};

inline CoordinateBundle to_coordinates(const SubpopulationPartition& p, const Vec& x, const Vec& u) {
  if (x.size() != p.total_state_dim() || u.size() != p.total_action_dim()) {
    throw DimensionError("to_coordinates: dimension mismatch");
  }
  CoordinateBundle c;
  c.partition = p;
  c.x_bar = Vec::Zero(p.mean_state_dim());
  c.u_bar = Vec::Zero(p.mean_action_dim());
  c.x_tilde.resize(p.L());
  c.u_tilde.resize(p.L());
  for (int l = 0; l < p.L(); ++l) {
    const int d = p.state_dims[l], k = p.action_dims[l], n = p.sizes[l];
    Vec xm = Vec::Zero(d), um = Vec::Zero(k);
    for (int i = 0; i < n; ++i) {
      xm += x.segment(p.agent_state_offset(l, i), d);
      um += u.segment(p.agent_action_offset(l, i), k);
    }
    xm /= n;
    um /= n;
    c.x_bar.segment(p.mean_state_offset(l), d) = xm;
    c.u_bar.segment(p.mean_action_offset(l), k) = um;
    for (int i = 0; i < n; ++i) {
      c.x_tilde[l].push_back(x.segment(p.agent_state_offset(l, i), d) - xm);
      c.u_tilde[l].push_back(u.segment(p.agent_action_offset(l, i), k) - um);
    }
  }
  return c;
}

inline constexpr double kZeroMeanTol = 1e-8;

struct GlobalPoint {
  Vec x;
  Vec u;
};

inline GlobalPoint recover_coordinates(const CoordinateBundle& c) {
  const auto& p = c.partition;
  if (static_cast<int>(c.x_tilde.size()) != p.L() || static_cast<int>(c.u_tilde.size()) != p.L() ||
      c.x_bar.size() != p.mean_state_dim() || c.u_bar.size() != p.mean_action_dim()) {
    throw DimensionError("recover_coordinates: bundle does not match its partition");
  }
  GlobalPoint g{Vec(p.total_state_dim()), Vec(p.total_action_dim())};
  for (int l = 0; l < p.L(); ++l) {
    const int d = p.state_dims[l], k = p.action_dims[l], n = p.sizes[l];
    if (static_cast<int>(c.x_tilde[l].size()) != n || static_cast<int>(c.u_tilde[l].size()) != n) {
      throw DimensionError("recover_coordinates: wrong number of agents");
    }
    Vec xs = Vec::Zero(d), us = Vec::Zero(k);
    double scale = 1.0;
    for (int i = 0; i < n; ++i) {
      if (c.x_tilde[l][i].size() != d || c.u_tilde[l][i].size() != k) {
        throw DimensionError("recover_coordinates: wrong agent dimension");
      }
      xs += c.x_tilde[l][i];
      us += c.u_tilde[l][i];
      scale = std::max({scale, c.x_tilde[l][i].cwiseAbs().maxCoeff(), c.u_tilde[l][i].cwiseAbs().maxCoeff()});
    }
    const double viol = std::max(xs.cwiseAbs().maxCoeff(), us.cwiseAbs().maxCoeff()) / n;
    if (viol > kZeroMeanTol * scale) {
      throw ConsistencyError("recover_coordinates: deviations of subpopulation " + std::to_string(l) +
                             " have mean " + std::to_string(viol) + ", expected zero");
    }
    const Vec xm = c.x_bar.segment(p.mean_state_offset(l), d);
    const Vec um = c.u_bar.segment(p.mean_action_offset(l), k);
    for (int i = 0; i < n; ++i) {
      g.x.segment(p.agent_state_offset(l, i), d) = c.x_tilde[l][i] + xm;
      g.u.segment(p.agent_action_offset(l, i), k) = c.u_tilde[l][i] + um;
    }
  }
  return g;
}

struct AuxiliaryCosts {
  double c_bar = 0.0;
  std::vector<double> c_tilde;  // summed over the agents of each subpopulation

  double total() const {
    double s = c_bar;
    for (double v : c_tilde) s += v;
    return s;
  }
};

inline constexpr double kCostFormTol = 1e-8;

/// Mean-field cost and per-subpopulation deviation costs. When `sys` is
/// given, each deviation cost is also evaluated as
/// c_gt(x, u) - c_gt(x with subpopulation l collapsed to its mean) and the
/// two forms must agree to 1e-8 relative.
inline AuxiliaryCosts auxiliary_costs(const AuxiliaryEnsemble& ens, const CoordinateBundle& c,
                                      const GlobalLQRSystem* sys = nullptr) {
  const auto& p = ens.partition;
  if (!(c.partition == p)) throw DimensionError("auxiliary_costs: partition mismatch");
  AuxiliaryCosts out;
  out.c_bar = c.x_bar.dot(ens.mean_field.Q_eff * c.x_bar) + c.u_bar.dot(ens.mean_field.R_eff * c.u_bar);
  for (int l = 0; l < p.L(); ++l) {
    const auto& s = ens.subsystems[l];
    double acc = 0.0;
    if (!s.degenerate()) {
      for (int i = 0; i < p.sizes[l]; ++i) {
        acc += c.x_tilde[l][i].dot(s.Q * c.x_tilde[l][i]) + c.u_tilde[l][i].dot(s.R * c.u_tilde[l][i]);
      }
    }
    out.c_tilde.push_back(acc);
  }
  if (sys != nullptr) {
    const GlobalPoint g = recover_coordinates(c);
    const double full = global_cost(*sys, g.x, g.u);
    for (int l = 0; l < p.L(); ++l) {
      Vec xb = g.x, ub = g.u;
      const int d = p.state_dims[l], k = p.action_dims[l];
      for (int i = 0; i < p.sizes[l]; ++i) {
        xb.segment(p.agent_state_offset(l, i), d) = c.x_bar.segment(p.mean_state_offset(l), d);
        ub.segment(p.agent_action_offset(l, i), k) = c.u_bar.segment(p.mean_action_offset(l), k);
      }
      const double alt = full - global_cost(*sys, xb, ub);
      if (std::abs(alt - out.c_tilde[l]) > kCostFormTol * (1.0 + std::abs(full))) {
        throw IntegrityError("auxiliary_costs: deviation cost of subpopulation " + std::to_string(l) +
                             " disagrees between forms (" + std::to_string(out.c_tilde[l]) + " vs " +
                             std::to_string(alt) + ")");
      }
    }
  }
  return out;
}

/// Global gain G with u = -G x equivalent to u^i = -K_l (x^i - xbar^l) - (K_bar xbar)^l.
inline Mat compose_global_policy(const SubpopulationPartition& p, const std::vector<Mat>& K,
                                 const Mat& K_bar) {
  if (static_cast<int>(K.size()) != p.L()) throw DimensionError("compose_global_policy: one gain per subpopulation");
  if (K_bar.rows() != p.mean_action_dim() || K_bar.cols() != p.mean_state_dim()) {
    throw DimensionError("compose_global_policy: K_bar has wrong shape");
  }
  for (int l = 0; l < p.L(); ++l) {
    if (K[l].rows() != p.action_dims[l] || K[l].cols() != p.state_dims[l]) {
      throw DimensionError("compose_global_policy: K_" + std::to_string(l + 1) + " has wrong shape");
    }
  }
  Mat G = Mat::Zero(p.total_action_dim(), p.total_state_dim());
  for (int l = 0; l < p.L(); ++l)
    for (int i = 0; i < p.sizes[l]; ++i)
      for (int m = 0; m < p.L(); ++m)
        for (int j = 0; j < p.sizes[m]; ++j) {
          Mat blk = K_bar.block(p.mean_action_offset(l), p.mean_state_offset(m), p.action_dims[l], p.state_dims[m]) /
                    double(p.sizes[m]);
          if (l == m) {
            blk -= K[l] / double(p.sizes[l]);
            if (i == j) blk += K[l];
          }
          G.block(p.agent_action_offset(l, i), p.agent_state_offset(m, j), p.action_dims[l], p.state_dims[m]) = blk;
        }
  return G;
}

inline Mat compose_global_policy(const AuxiliaryEnsemble& ens, const std::vector<Mat>& K, const Mat& K_bar) {
  return compose_global_policy(ens.partition, K, K_bar);
}

}  // namespace hierlqr
