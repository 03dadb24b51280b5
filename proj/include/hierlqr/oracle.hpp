#pragma once

// Model-based analysis of a single LQR instance under a linear Gaussian
// policy: stationary covariance, cost, gradient, natural gradient, optimal
// policy, value vector, the GTD population operator and diagnostic bounds.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "hierlqr/errors.hpp"
#include "hierlqr/matlin.hpp"

namespace hierlqr {

struct LQRInstance {
  Mat A;
  Mat B;
  SymMat Q;
  SymMat R;
  SymMat Phi;

  Index state_dim() const { return A.rows(); }
  Index action_dim() const { return B.cols(); }

  void check_dims() const {
    require_square(A, "LQRInstance.A");
    if (B.rows() != A.rows() || Q.dim() != A.rows() || R.dim() != B.cols() || Phi.dim() != A.rows() ||
        B.cols() == 0) {
      throw DimensionError("LQRInstance: inconsistent dimensions");
    }
  }

  /// Dimensions plus Q positive semi-definite, R and Phi positive definite.
  void validate() const {
    check_dims();
    if (double lam = min_eigenvalue(Q); lam < -1e-12 * std::max(1.0, Q.norm())) throw AssumptionError("Q", lam);
    if (double lam = min_eigenvalue(R); !(lam > 0.0)) throw AssumptionError("R", lam);
    if (double lam = min_eigenvalue(Phi); !(lam > 0.0)) throw AssumptionError("Phi", lam);
  }
};

struct LinearGaussianPolicy {
  Mat K;
  double sigma = 0.0;
};

inline constexpr double kStabilityMargin = 1e-6;

inline double closed_loop_radius(const LQRInstance& inst, const Mat& K) {
  if (K.rows() != inst.action_dim() || K.cols() != inst.state_dim()) {
    throw DimensionError("gain has shape " + std::to_string(K.rows()) + "x" + std::to_string(K.cols()) +
                         ", expected " + std::to_string(inst.action_dim()) + "x" + std::to_string(inst.state_dim()));
  }
  return spectral_radius(inst.A - inst.B * K);
}

inline bool is_stable(const LQRInstance& inst, const Mat& K) {
  return closed_loop_radius(inst, K) < 1.0 - kStabilityMargin;
}

inline void require_stable(const LQRInstance& inst, const Mat& K, const char* where) {
  const double rho = closed_loop_radius(inst, K);
  if (!(rho < 1.0 - kStabilityMargin)) {
    throw InstabilityError(std::string(where) + ": closed loop is not stable", rho);
  }
}

struct PolicyAnalysis {
  SymMat Sigma;      // stationary state covariance
  SymMat P;          // value matrix of Q + K^T R K under A - BK
  SymMat Phi_sigma;  // Phi + sigma^2 B B^T
  double cost = 0.0;
  double cost_value_form = 0.0;
  Mat grad;
  Mat E;             // natural gradient direction
  double rho = 0.0;
};

inline constexpr double kCostFormAgreement = 1e-8;

inline PolicyAnalysis analyze_policy(const LQRInstance& inst, const LinearGaussianPolicy& pol) {
  inst.check_dims();
  const Mat& K = pol.K;
  PolicyAnalysis a;
  a.rho = closed_loop_radius(inst, K);
  if (!(a.rho < 1.0 - kStabilityMargin)) {
    throw InstabilityError("analyze_policy: closed loop is not stable", a.rho);
  }
  const Mat F = inst.A - inst.B * K;
  const double s2 = pol.sigma * pol.sigma;
  a.Phi_sigma = SymMat::symmetrized(inst.Phi.mat() + s2 * inst.B * inst.B.transpose());
  a.Sigma = solve_lyapunov(F, a.Phi_sigma);
  const SymMat M = SymMat::symmetrized(inst.Q.mat() + K.transpose() * inst.R * K);
  a.P = solve_bellman(F, M);
  const double noise_cost = s2 * inst.R.trace();
  a.cost = (M.mat() * a.Sigma.mat()).trace() + noise_cost;
  a.cost_value_form = (a.P.mat() * a.Phi_sigma.mat()).trace() + noise_cost;
  if (std::abs(a.cost - a.cost_value_form) > kCostFormAgreement * std::max(std::abs(a.cost), 1e-300)) {
    throw IntegrityError("analyze_policy: cost formulas disagree (" + std::to_string(a.cost) + " vs " +
                         std::to_string(a.cost_value_form) + ")");
  }
  const Mat BtP = inst.B.transpose() * a.P;
  a.E = (inst.R.mat() + BtP * inst.B) * K - BtP * inst.A;
  a.grad = 2.0 * a.E * a.Sigma.mat();
  return a;
}

inline double policy_cost(const LQRInstance& inst, const LinearGaussianPolicy& pol) {
  return analyze_policy(inst, pol).cost;
}

struct OptimalPolicy {
  Mat K;
  SymMat P;
};

inline OptimalPolicy optimal_policy(const LQRInstance& inst) {
  inst.check_dims();
  auto sol = solve_dare(inst.A, inst.B, inst.Q, inst.R);
  return {std::move(sol.K), std::move(sol.P)};
}

struct GradientCheck {
  double max_rel_err = 0.0;
  double analytic_norm = 0.0;
  double fd_norm = 0.0;
  double h_used = 0.0;
  Mat fd_grad;
};

inline constexpr double kDefaultFdStep = 1e-5;

/// Central differences of the cost over every gain entry compared with the
/// analytic gradient. Relative error is measured against the largest
/// analytic entry (floored at 1e-8). If a perturbed gain is unstable, h is
/// halved once.
inline GradientCheck gradient_fd_check(const LQRInstance& inst, const LinearGaussianPolicy& pol,
                                       double h = kDefaultFdStep) {
  const PolicyAnalysis base = analyze_policy(inst, pol);
  auto attempt = [&](double step) -> std::optional<Mat> {
    Mat fd(pol.K.rows(), pol.K.cols());
    for (Index i = 0; i < pol.K.rows(); ++i) {
      for (Index j = 0; j < pol.K.cols(); ++j) {
        LinearGaussianPolicy plus = pol, minus = pol;
        plus.K(i, j) += step;
        minus.K(i, j) -= step;
        if (!is_stable(inst, plus.K) || !is_stable(inst, minus.K)) return std::nullopt;
        fd(i, j) = (policy_cost(inst, plus) - policy_cost(inst, minus)) / (2.0 * step);
      }
    }
    return fd;
  };
  GradientCheck out;
  out.h_used = h;
  auto fd = attempt(h);
  if (!fd) {
    out.h_used = h / 2.0;
    fd = attempt(out.h_used);
    if (!fd) throw InstabilityError("gradient_fd_check: perturbed gain unstable after halving h", base.rho);
  }
  out.fd_grad = *fd;
  out.analytic_norm = base.grad.norm();
  out.fd_norm = fd->norm();
  const double denom = std::max(base.grad.cwiseAbs().maxCoeff(), 1e-8);
  out.max_rel_err = (*fd - base.grad).cwiseAbs().maxCoeff() / denom;
  return out;
}

// ---------------------------------------------------------------------------
// Value vector and the GTD population operator

struct ValueVector {
  SymMat Delta;  // [[Q + A^T P A, A^T P B], [B^T P A, R + B^T P B]]
  Vec delta_star;
  double cost = 0.0;
  double noise_offset = 0.0;  // sigma^2 Tr(R + P B B^T)
  double value_offset = 0.0;  // Tr(P Sigma)
  Index d = 0;
  Index k = 0;

  /// Action value Q_K(x, u) for v = (x, u).
  double q_value(const Vec& feature) const { return feature.dot(delta_star) - noise_offset - value_offset; }
};

/// svec(v v^T), computed without forming the outer product.
inline Vec feature(const Vec& v) {
  const Index n = v.size();
  Vec out(svec_dim(n));
  Index t = 0;
  for (Index i = 0; i < n; ++i) {
    out(t++) = v(i) * v(i);
    for (Index j = i + 1; j < n; ++j) out(t++) = M_SQRT2 * v(i) * v(j);
  }
  return out;
}

inline ValueVector value_vector(const LQRInstance& inst, const LinearGaussianPolicy& pol) {
  const PolicyAnalysis a = analyze_policy(inst, pol);
  const Index d = inst.state_dim(), k = inst.action_dim();
  Mat D(d + k, d + k);
  const Mat AtP = inst.A.transpose() * a.P;
  D.topLeftCorner(d, d) = inst.Q.mat() + AtP * inst.A;
  D.topRightCorner(d, k) = AtP * inst.B;
  D.bottomLeftCorner(k, d) = D.topRightCorner(d, k).transpose();
  D.bottomRightCorner(k, k) = inst.R.mat() + inst.B.transpose() * a.P * inst.B;
  ValueVector vv;
  vv.Delta = SymMat::symmetrized(D);
  vv.delta_star = svec(vv.Delta);
  vv.cost = a.cost;
  const double s2 = pol.sigma * pol.sigma;
  vv.noise_offset = s2 * (inst.R.trace() + (a.P.mat() * inst.B * inst.B.transpose()).trace());
  vv.value_offset = (a.P.mat() * a.Sigma.mat()).trace();
  vv.d = d;
  vv.k = k;
  return vv;
}

/// E = Delta22 K - Delta21 with Delta = smat(delta).
inline Mat recover_natural_gradient(const Vec& delta, const Mat& K) {
  const SymMat D = smat(delta);
  const Index k = K.rows(), d = K.cols();
  if (D.dim() != d + k) throw DimensionError("recover_natural_gradient: value vector does not match gain shape");
  return D.bottomRightCorner(k, k) * K - D.bottomLeftCorner(k, d);
}

/// Stationary covariance of v = (x, u) and the mean transition of v.
struct PairChain {
  SymMat Sigma_v;  // [[S, -S K^T], [-K S, K S K^T + sigma^2 I]]
  Mat K_breve;     // [[A, B], [-K A, -K B]]
};

inline PairChain pair_chain(const LQRInstance& inst, const LinearGaussianPolicy& pol, const PolicyAnalysis& a) {
  const Index d = inst.state_dim(), k = inst.action_dim();
  const Mat& K = pol.K;
  Mat S(d + k, d + k);
  S.topLeftCorner(d, d) = a.Sigma;
  S.topRightCorner(d, k) = -a.Sigma.mat() * K.transpose();
  S.bottomLeftCorner(k, d) = -K * a.Sigma.mat();
  S.bottomRightCorner(k, k) = K * a.Sigma.mat() * K.transpose() + pol.sigma * pol.sigma * Mat::Identity(k, k);
  Mat Kb(d + k, d + k);
  Kb.topLeftCorner(d, d) = inst.A;
  Kb.topRightCorner(d, k) = inst.B;
  Kb.bottomLeftCorner(k, d) = -K * inst.A;
  Kb.bottomRightCorner(k, k) = -K * inst.B;
  return {SymMat::symmetrized(S), std::move(Kb)};
}

struct GtdOperator {
  Mat Theta;       // E[phi (phi - phi')^T]
  Vec mean_phi;    // E[phi] = svec(Sigma_v)
  Vec d_vec;       // E[c phi]
  Mat Omega;       // [[1, 0], [E phi, Theta]]
  double cost = 0.0;
  Vec delta_star;
  double sigma_min_theta = 0.0;
  double sigma_min_omega = 0.0;
  double dual_residual = 0.0;  // norm of the dual maximizer at (C(K), delta*)
};

/// Population quantities of the GTD saddle problem. With the 1/2-normalized
/// symmetric Kronecker product the fourth Gaussian moment gives
/// E[phi phi^T] = 2 (S kron_s S) + svec(S) svec(S)^T, so
/// Theta = 2 (S kron_s S)(I - Kb^T kron_s Kb^T).
inline GtdOperator theta_matrix(const LQRInstance& inst, const LinearGaussianPolicy& pol) {
  if (!(pol.sigma > 0.0)) {
    throw ConfigError("theta_matrix: exploration scale must be positive (stationary pair covariance is singular)");
  }
  const PolicyAnalysis a = analyze_policy(inst, pol);
  const ValueVector vv = value_vector(inst, pol);
  const PairChain pc = pair_chain(inst, pol, a);
  const Index m = svec_dim(inst.state_dim() + inst.action_dim());
  const Mat SS = sym_kron(pc.Sigma_v, pc.Sigma_v);
  const Mat KK = sym_kron(pc.K_breve.transpose(), pc.K_breve.transpose());
  GtdOperator op;
  op.Theta = 2.0 * SS * (Mat::Identity(m, m) - KK);
  op.mean_phi = svec(pc.Sigma_v);
  Mat cost_mat = Mat::Zero(inst.state_dim() + inst.action_dim(), inst.state_dim() + inst.action_dim());
  cost_mat.topLeftCorner(inst.state_dim(), inst.state_dim()) = inst.Q;
  cost_mat.bottomRightCorner(inst.action_dim(), inst.action_dim()) = inst.R;
  op.cost = a.cost;
  op.d_vec = 2.0 * SS * svec(SymMat::symmetrized(cost_mat)) + a.cost * op.mean_phi;
  op.Omega = Mat::Zero(m + 1, m + 1);
  op.Omega(0, 0) = 1.0;
  op.Omega.block(1, 0, m, 1) = op.mean_phi;
  op.Omega.block(1, 1, m, m) = op.Theta;
  op.delta_star = vv.delta_star;
  Eigen::JacobiSVD<Mat> svt(op.Theta), svo(op.Omega);
  op.sigma_min_theta = svt.singularValues().minCoeff();
  op.sigma_min_omega = svo.singularValues().minCoeff();
  op.dual_residual = (a.cost * op.mean_phi + op.Theta * vv.delta_star - op.d_vec).norm();
  return op;
}

// ---------------------------------------------------------------------------
// Diagnostic inequalities

struct DominationBounds {
  double lower = 0.0;
  double upper = 0.0;
  double gap = 0.0;
  bool holds = false;
};

inline constexpr double kDominationSlack = 1e-8;

/// sigma_min(Phi_s) / ||R + B^T P B|| Tr(E^T E) <= C(K) - C(K*) <= ||Sigma_K*|| / sigma_min(R) Tr(E^T E),
/// with Phi_s the exploration-augmented noise covariance and the optimal
/// analysis taken at the same exploration scale.
inline DominationBounds dom_bounds(const LQRInstance& inst, const LinearGaussianPolicy& pol,
                                   const PolicyAnalysis& optimal) {
  const PolicyAnalysis a = analyze_policy(inst, pol);
  const double trEE = (a.E.transpose() * a.E).trace();
  const Mat S = inst.R.mat() + inst.B.transpose() * a.P * inst.B;
  DominationBounds b;
  b.lower = sigma_min(a.Phi_sigma) / op_norm(S) * trEE;
  b.upper = op_norm(optimal.Sigma) / sigma_min(inst.R) * trEE;
  b.gap = a.cost - optimal.cost;
  b.holds = b.lower <= b.gap + kDominationSlack && b.gap <= b.upper + kDominationSlack;
  return b;
}

/// A_{K,K'}(x) = 2 x^T (K'-K)^T E_K x + x^T (K'-K)^T (R + B^T P_K B)(K'-K) x.
inline double advantage(const LQRInstance& inst, const PolicyAnalysis& a, const Mat& K, const Mat& K_prime,
                        const Vec& x) {
  const Mat D = K_prime - K;
  const Mat S = inst.R.mat() + inst.B.transpose() * a.P * inst.B;
  const Vec Dx = D * x;
  return 2.0 * Dx.dot(a.E * x) + Dx.dot(S * Dx);
}

/// -Tr(x x^T E^T (R + B^T P B)^{-1} E): the minimum of the advantage over K'.
inline double advantage_lower_bound(const LQRInstance& inst, const PolicyAnalysis& a, const Vec& x) {
  const Mat S = inst.R.mat() + inst.B.transpose() * a.P * inst.B;
  const Vec Ex = a.E * x;
  return -Ex.dot(S.ldlt().solve(Ex));
}

struct AdvantageCheck {
  double lhs = 0.0;       // x0^T (P_K' - P_K) x0
  double sum = 0.0;       // advantage summed along the K' trajectory
  double residual = 0.0;  // |lhs - sum|
  double tail = 0.0;      // exact remainder x_T^T (P_K' - P_K) x_T
  int horizon = 0;
};

inline int advantage_horizon(double rho) {
  if (rho <= 0.0) return 1;
  const double T = std::ceil(std::log(1e-10) / std::log(rho));
  return static_cast<int>(std::clamp(T, 1.0, 1e7));
}

/// Sums the advantage of K' relative to K along x_{t+1} = (A - BK') x_t.
/// `horizon` <= 0 selects ceil(log(1e-10) / log(rho(A - BK'))).
inline AdvantageCheck advantage_identity_check(const LQRInstance& inst, const Mat& K, const Mat& K_prime,
                                               const Vec& x0, int horizon = 0) {
  const PolicyAnalysis a = analyze_policy(inst, {K, 0.0});
  const PolicyAnalysis ap = analyze_policy(inst, {K_prime, 0.0});
  AdvantageCheck c;
  c.horizon = horizon > 0 ? horizon : advantage_horizon(ap.rho);
  const Mat F = inst.A - inst.B * K_prime;
  const Mat dP = ap.P.mat() - a.P.mat();
  Vec x = x0;
  for (int t = 0; t < c.horizon; ++t) {
    c.sum += advantage(inst, a, K, K_prime, x);
    x = F * x;
  }
  c.lhs = x0.dot(dP * x0);
  c.tail = x.dot(dP * x);
  c.residual = std::abs(c.lhs - c.sum);
  return c;
}

struct BoundMats {
  double sigma_norm = 0.0;
  double sigma_bound = 0.0;  // C(K) / sigma_min(Q)
  double p_norm = 0.0;
  double p_bound = 0.0;      // C(K) / sigma_min(Phi_s)
  bool sigma_holds = false;
  bool p_holds = false;
};

inline BoundMats diagnostics_bound_mats(const LQRInstance& inst, const LinearGaussianPolicy& pol) {
  const PolicyAnalysis a = analyze_policy(inst, pol);
  BoundMats b;
  b.sigma_norm = op_norm(a.Sigma);
  b.sigma_bound = a.cost / sigma_min(inst.Q);
  b.p_norm = op_norm(a.P);
  b.p_bound = a.cost / sigma_min(a.Phi_sigma);
  const double slack = 1e-10;
  b.sigma_holds = b.sigma_norm <= b.sigma_bound * (1.0 + slack);
  b.p_holds = b.p_norm <= b.p_bound * (1.0 + slack);
  return b;
}

}  // namespace hierlqr
