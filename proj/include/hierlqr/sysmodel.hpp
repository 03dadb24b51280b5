#pragma once

// The original coupled multi-agent system, its subpopulation layout,
// a seeded generator of partially exchangeable instances and the
// exchangeability checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hierlqr/errors.hpp"
#include "hierlqr/matlin.hpp"
#include "hierlqr/rng.hpp"

namespace hierlqr {


/// Agents grouped into L subpopulations; agent blocks are laid out by
/// subpopulation in partition order.
struct SubpopulationPartition {
  std::vector<int> sizes;
  std::vector<int> state_dims;
  std::vector<int> action_dims;

  SubpopulationPartition() = default;
  SubpopulationPartition(std::vector<int> n, std::vector<int> d, std::vector<int> k)
      : sizes(std::move(n)), state_dims(std::move(d)), action_dims(std::move(k)) {
    validate();
  }

  int L() const { return static_cast<int>(sizes.size()); }

  void validate() const {
    if (sizes.empty()) throw DimensionError("partition: at least one subpopulation required");
    if (state_dims.size() != sizes.size() || action_dims.size() != sizes.size()) {
      throw DimensionError("partition: sizes, state_dims and action_dims must have equal length");
    }
    for (int l = 0; l < L(); ++l) {
      if (sizes[l] <= 0 || state_dims[l] <= 0 || action_dims[l] <= 0) {
        throw DimensionError("partition: all sizes and dimensions must be positive");
      }
    }
  }

  int num_agents() const {
    int n = 0;
    for (int s : sizes) n += s;
    return n;
  }
  Index total_state_dim() const {
    Index D = 0;
    for (int l = 0; l < L(); ++l) D += Index(sizes[l]) * state_dims[l];
    return D;
  }
  Index total_action_dim() const {
    Index K = 0;
    for (int l = 0; l < L(); ++l) K += Index(sizes[l]) * action_dims[l];
    return K;
  }
  /// Dimension of the stacked mean field (sum of d_l).
  Index mean_state_dim() const {
    Index d = 0;
    for (int v : state_dims) d += v;
    return d;
  }
  Index mean_action_dim() const {
    Index k = 0;
    for (int v : action_dims) k += v;
    return k;
  }

  /// Offset of subpopulation l's first agent in the global state vector.
  Index state_offset(int l) const {
    Index off = 0;
    for (int m = 0; m < l; ++m) off += Index(sizes[m]) * state_dims[m];
    return off;
  }
  Index action_offset(int l) const {
    Index off = 0;
    for (int m = 0; m < l; ++m) off += Index(sizes[m]) * action_dims[m];
    return off;
  }
  Index agent_state_offset(int l, int i) const { return state_offset(l) + Index(i) * state_dims[l]; }
  Index agent_action_offset(int l, int i) const {
    return action_offset(l) + Index(i) * action_dims[l];
  }
  Index mean_state_offset(int l) const {
    Index off = 0;
    for (int m = 0; m < l; ++m) off += state_dims[m];
    return off;
  }
  Index mean_action_offset(int l) const {
    Index off = 0;
    for (int m = 0; m < l; ++m) off += action_dims[m];
    return off;
  }

  bool operator==(const SubpopulationPartition&) const = default;
};

struct GlobalLQRSystem {
  Mat A;
  Mat B;
  SymMat Q;
  SymMat R;
  std::vector<SymMat> W_noise;  // per-agent noise covariance, one per subpopulation
  SubpopulationPartition partition;

  /// Checks dimensions, Q, R positive semi-definite and every W_l positive definite.
  void validate() const {
    partition.validate();
    const Index D = partition.total_state_dim();
    const Index U = partition.total_action_dim();
    if (A.rows() != D || A.cols() != D) throw DimensionError("system: A must be DxD");
    if (B.rows() != D || B.cols() != U) throw DimensionError("system: B must be Dx(total action dim)");
    if (Q.dim() != D) throw DimensionError("system: Q must be DxD");
    if (R.dim() != U) throw DimensionError("system: R has wrong dimension");
    if (!A.allFinite() || !B.allFinite() || !Q.allFinite() || !R.allFinite()) {
      throw DimensionError("system: non-finite entries");
    }
    if (static_cast<int>(W_noise.size()) != partition.L()) {
      throw DimensionError("system: one noise covariance per subpopulation required");
    }
    const double psd_tol = 1e-12;
    if (double lam = min_eigenvalue(Q); lam < -psd_tol * std::max(1.0, Q.norm())) {
      throw AssumptionError("Q", lam);
    }
    if (double lam = min_eigenvalue(R); lam < -psd_tol * std::max(1.0, R.norm())) {
      throw AssumptionError("R", lam);
    }
    for (int l = 0; l < partition.L(); ++l) {
      if (W_noise[l].dim() != partition.state_dims[l]) {
        throw DimensionError("system: W_noise[" + std::to_string(l) + "] has wrong dimension");
      }
      if (double lam = min_eigenvalue(W_noise[l]); !(lam > 0.0)) {
        throw AssumptionError("W_noise[" + std::to_string(l) + "]", lam);
      }
    }
  }
};

inline double global_cost(const GlobalLQRSystem& sys, const Vec& x, const Vec& u) {
  if (x.size() != sys.A.rows() || u.size() != sys.B.cols()) {
    throw DimensionError("global_cost: dimension mismatch");
  }
  return x.dot(sys.Q * x) + u.dot(sys.R * u);
}

/// Block covariance of the global noise: W_l repeated for each agent.
inline SymMat global_noise_covariance(const GlobalLQRSystem& sys) {
  std::vector<Mat> blocks;
  for (int l = 0; l < sys.partition.L(); ++l)
    for (int i = 0; i < sys.partition.sizes[l]; ++i) blocks.push_back(sys.W_noise[l]);
  return SymMat::symmetrized(block_diag(blocks));
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

enum class Kind { State, Action };

// Tiles per-subpopulation diagonal blocks and per-pair off-diagonal blocks
// into a global matrix with row layout `rows` and column layout `cols`.
inline Mat tile(const SubpopulationPartition& p, Kind rows, Kind cols, const std::vector<Mat>& diag,
                const std::vector<std::vector<Mat>>& off) {
  auto dim = [&](Kind kd, int l) { return kd == Kind::State ? p.state_dims[l] : p.action_dims[l]; };
  auto offset = [&](Kind kd, int l, int i) {
    return kd == Kind::State ? p.agent_state_offset(l, i) : p.agent_action_offset(l, i);
  };
  const Index nr = rows == Kind::State ? p.total_state_dim() : p.total_action_dim();
  const Index nc = cols == Kind::State ? p.total_state_dim() : p.total_action_dim();
  Mat M(nr, nc);
  for (int l = 0; l < p.L(); ++l)
    for (int i = 0; i < p.sizes[l]; ++i)
      for (int k = 0; k < p.L(); ++k)
        for (int j = 0; j < p.sizes[k]; ++j) {
          const Mat& blk = (l == k && i == j) ? diag[l] : off[l][k];
          M.block(offset(rows, l, i), offset(cols, k, j), dim(rows, l), dim(cols, k)) = blk;
        }
  return M;
}

struct BlockDraw {
  std::vector<Mat> diag;
  std::vector<std::vector<Mat>> off;
};

inline BlockDraw draw_general(RngStream& rng, const SubpopulationPartition& p, Kind rows, Kind cols,
                              double scale) {
  auto dim = [&](Kind kd, int l) { return kd == Kind::State ? p.state_dims[l] : p.action_dims[l]; };
  BlockDraw out;
  for (int l = 0; l < p.L(); ++l) out.diag.push_back(scale * rng.normal_matrix(dim(rows, l), dim(cols, l)));
  out.off.assign(p.L(), std::vector<Mat>(p.L()));
  for (int l = 0; l < p.L(); ++l)
    for (int k = 0; k < p.L(); ++k) out.off[l][k] = scale * rng.normal_matrix(dim(rows, l), dim(cols, k));
  return out;
}

// Blocks of a symmetric matrix: symmetric diagonal and (l,l) blocks and
// off[k][l] = off[l][k]^T.
inline BlockDraw draw_symmetric(RngStream& rng, const SubpopulationPartition& p, Kind kind, double scale) {
  auto dim = [&](int l) { return kind == Kind::State ? p.state_dims[l] : p.action_dims[l]; };
  auto sym = [&](int n) {
    Mat G = rng.normal_matrix(n, n);
    return Mat(scale * 0.5 * (G + G.transpose()));
  };
  BlockDraw out;
  for (int l = 0; l < p.L(); ++l) out.diag.push_back(sym(dim(l)));
  out.off.assign(p.L(), std::vector<Mat>(p.L()));
  for (int l = 0; l < p.L(); ++l) {
    out.off[l][l] = sym(dim(l));
    for (int k = l + 1; k < p.L(); ++k) {
      out.off[l][k] = scale * rng.normal_matrix(dim(l), dim(k));
      out.off[k][l] = out.off[l][k].transpose();
    }
  }
  return out;
}

// Representative-agent matrix diag - off(l,l) and mean-field matrix with
// blocks n_k off(l,k) plus diag(diag_l - off(l,l)) for the given draw.
inline Mat individual_part(const BlockDraw& b, const SubpopulationPartition& p, int l) {
  return p.sizes[l] == 1 ? Mat(b.diag[l]) : Mat(b.diag[l] - b.off[l][l]);
}

inline Mat mean_field_part(const BlockDraw& b, const SubpopulationPartition& p, Kind rows, Kind cols) {
  auto dim = [&](Kind kd, int l) { return kd == Kind::State ? p.state_dims[l] : p.action_dims[l]; };
  auto moff = [&](Kind kd, int l) { return kd == Kind::State ? p.mean_state_offset(l) : p.mean_action_offset(l); };
  const Index nr = rows == Kind::State ? p.mean_state_dim() : p.mean_action_dim();
  const Index nc = cols == Kind::State ? p.mean_state_dim() : p.mean_action_dim();
  Mat M = Mat::Zero(nr, nc);
  for (int l = 0; l < p.L(); ++l) {
    for (int k = 0; k < p.L(); ++k) {
      Mat blk = (p.sizes[k] == 1 && l == k) ? Mat::Zero(dim(rows, l), dim(cols, k)) : Mat(p.sizes[k] * b.off[l][k]);
      if (l == k) blk += individual_part(b, p, l);
      M.block(moff(rows, l), moff(cols, k), dim(rows, l), dim(cols, k)) = blk;
    }
  }
  return M;
}

// Quadratic-cost counterpart: Q_eff = (n_l n_k off(l,k)) + diag(n_l (diag_l - off(l,l))).
inline Mat effective_cost(const BlockDraw& b, const SubpopulationPartition& p, Kind kind) {
  auto dim = [&](int l) { return kind == Kind::State ? p.state_dims[l] : p.action_dims[l]; };
  auto moff = [&](int l) { return kind == Kind::State ? p.mean_state_offset(l) : p.mean_action_offset(l); };
  const Index n = kind == Kind::State ? p.mean_state_dim() : p.mean_action_dim();
  Mat M = Mat::Zero(n, n);
  for (int l = 0; l < p.L(); ++l)
    for (int k = 0; k < p.L(); ++k) {
      Mat blk = (p.sizes[k] == 1 && l == k) ? Mat::Zero(dim(l), dim(k))
                                             : Mat(double(p.sizes[l]) * p.sizes[k] * b.off[l][k]);
      if (l == k) blk += p.sizes[l] * individual_part(b, p, l);
      M.block(moff(l), moff(k), dim(l), dim(k)) = blk;
    }
  return M;
}

inline double min_aux_eigenvalue(const BlockDraw& b, const SubpopulationPartition& p, Kind kind) {
  double lam = min_eigenvalue(SymMat::symmetrized(effective_cost(b, p, kind)));
  for (int l = 0; l < p.L(); ++l) {
    if (p.sizes[l] > 1) lam = std::min(lam, min_eigenvalue(SymMat::symmetrized(individual_part(b, p, l))));
  }
  return lam;
}

inline void shift_diagonal(BlockDraw& b, double s) {
  for (auto& d : b.diag) d += s * Mat::Identity(d.rows(), d.cols());
}

}  // namespace detail

inline constexpr double kTargetSpectralRadius = 0.9;
inline constexpr double kMinAuxEigenvalue = 0.1;

/// Seeded random partially exchangeable system. Free blocks are Gaussian
/// with standard deviation `scale`; A is shrunk so the global and every
/// auxiliary dynamics matrix has spectral radius at most 0.9; Q and R are
/// shifted by a multiple of the identity when an auxiliary cost matrix has
/// an eigenvalue below 0.1. Each agent receives noise covariance noise^2 I.
inline GlobalLQRSystem generate_system(const SubpopulationPartition& partition, std::uint64_t seed,
                                       double scale, double noise = 1.0) {
  using detail::Kind;
  partition.validate();
  RngStream rng(seed, 0);
  const auto& p = partition;
  auto a = detail::draw_general(rng, p, Kind::State, Kind::State, scale);
  auto b = detail::draw_general(rng, p, Kind::State, Kind::Action, scale);
  auto q = detail::draw_symmetric(rng, p, Kind::State, scale);
  auto r = detail::draw_symmetric(rng, p, Kind::Action, scale);
  for (int l = 0; l < p.L(); ++l) {
    if (p.sizes[l] == 1) {
      // No off-diagonal block exists inside a singleton subpopulation.
      a.off[l][l].setZero();
      b.off[l][l].setZero();
      q.off[l][l].setZero();
      r.off[l][l].setZero();
    }
  }

  double rho = spectral_radius(detail::mean_field_part(a, p, Kind::State, Kind::State));
  for (int l = 0; l < p.L(); ++l) rho = std::max(rho, spectral_radius(detail::individual_part(a, p, l)));
  Mat A = detail::tile(p, Kind::State, Kind::State, a.diag, a.off);
  rho = std::max(rho, spectral_radius(A));
  if (rho > kTargetSpectralRadius) A *= kTargetSpectralRadius / rho;

  for (auto* draw : {&q, &r}) {
    const Kind kind = draw == &q ? Kind::State : Kind::Action;
    const double lam = detail::min_aux_eigenvalue(*draw, p, kind);
    if (lam < kMinAuxEigenvalue) detail::shift_diagonal(*draw, std::abs(lam) + kMinAuxEigenvalue);
  }

  GlobalLQRSystem sys;
  sys.partition = p;
  sys.A = std::move(A);
  sys.B = detail::tile(p, Kind::State, Kind::Action, b.diag, b.off);
  sys.Q = SymMat::symmetrized(detail::tile(p, Kind::State, Kind::State, q.diag, q.off));
  sys.R = SymMat::symmetrized(detail::tile(p, Kind::Action, Kind::Action, r.diag, r.off));
  for (int l = 0; l < p.L(); ++l) {
    sys.W_noise.push_back(SymMat::symmetrized(noise * noise * Mat::Identity(p.state_dims[l], p.state_dims[l])));
  }
  sys.validate();
  return sys;
}

// ---------------------------------------------------------------------------
// Exchangeability

struct BlockFamily {
  std::string matrix;  // "A", "B", "Q" or "R"
  int row_subpop = 0;
  int col_subpop = 0;
  std::string kind;    // "diag", "offdiag" or "cross"
  double max_deviation = 0.0;

  std::string name() const {
    return matrix + "[" + std::to_string(row_subpop) + "," + std::to_string(col_subpop) + "]." + kind;
  }
};

struct ExchangeabilityReport {
  bool holds = true;
  double tol = 0.0;
  std::vector<BlockFamily> families;    // every family checked
  std::vector<BlockFamily> violations;  // families with deviation above tol
};

class ExchangeabilityError : public Error {
 public:
  explicit ExchangeabilityError(ExchangeabilityReport report)
      : Error(describe(report)), report_(std::move(report)) {}
  const ExchangeabilityReport& report() const { return report_; }

 private:
  static std::string describe(const ExchangeabilityReport& r) {
    std::string s = "partial exchangeability violated:";
    for (const auto& v : r.violations) s += " " + v.name() + "=" + std::to_string(v.max_deviation);
    return s;
  }
  ExchangeabilityReport report_;
};

inline constexpr double kExchangeabilityTol = 1e-10;

/// Checks that within-subpopulation diagonal blocks, within-subpopulation
/// off-diagonal blocks and cross-subpopulation blocks of A, B, Q, R are each
/// agent independent, up to absolute deviation `tol`.
inline ExchangeabilityReport verify_partial_exchangeability(const GlobalLQRSystem& sys,
                                                            double tol = kExchangeabilityTol) {
  const auto& p = sys.partition;
  p.validate();
  const Index D = p.total_state_dim(), U = p.total_action_dim();
  if (sys.A.rows() != D || sys.A.cols() != D || sys.B.rows() != D || sys.B.cols() != U ||
      sys.Q.rows() != D || sys.R.rows() != U) {
    throw DimensionError("verify_partial_exchangeability: matrix layout does not match the partition");
  }
  ExchangeabilityReport rep;
  rep.tol = tol;
  struct Item {
    const char* name;
    const Mat* M;
    bool row_state;
    bool col_state;
  };
  const Item items[] = {{"A", &sys.A, true, true},
                        {"B", &sys.B, true, false},
                        {"Q", &sys.Q, true, true},
                        {"R", &sys.R, false, false}};
  for (const auto& it : items) {
    auto rdim = [&](int l) { return it.row_state ? p.state_dims[l] : p.action_dims[l]; };
    auto cdim = [&](int l) { return it.col_state ? p.state_dims[l] : p.action_dims[l]; };
    auto roff = [&](int l, int i) { return it.row_state ? p.agent_state_offset(l, i) : p.agent_action_offset(l, i); };
    auto coff = [&](int l, int i) { return it.col_state ? p.agent_state_offset(l, i) : p.agent_action_offset(l, i); };
    auto blk = [&](int l, int i, int k, int j) { return it.M->block(roff(l, i), coff(k, j), rdim(l), cdim(k)); };
    for (int l = 0; l < p.L(); ++l) {
      for (int k = 0; k < p.L(); ++k) {
        if (l == k) {
          BlockFamily diag{it.name, l, k, "diag", 0.0};
          for (int i = 1; i < p.sizes[l]; ++i)
            diag.max_deviation = std::max(diag.max_deviation, (blk(l, i, l, i) - blk(l, 0, l, 0)).cwiseAbs().maxCoeff());
          rep.families.push_back(diag);
          if (p.sizes[l] > 1) {
            BlockFamily off{it.name, l, k, "offdiag", 0.0};
            for (int i = 0; i < p.sizes[l]; ++i)
              for (int j = 0; j < p.sizes[l]; ++j)
                if (i != j)
                  off.max_deviation = std::max(off.max_deviation, (blk(l, i, l, j) - blk(l, 0, l, 1)).cwiseAbs().maxCoeff());
            rep.families.push_back(off);
          }
        } else {
          BlockFamily cross{it.name, l, k, "cross", 0.0};
          for (int i = 0; i < p.sizes[l]; ++i)
            for (int j = 0; j < p.sizes[k]; ++j)
              cross.max_deviation = std::max(cross.max_deviation, (blk(l, i, k, j) - blk(l, 0, k, 0)).cwiseAbs().maxCoeff());
          rep.families.push_back(cross);
        }
      }
    }
  }
  for (const auto& f : rep.families) {
    if (!(f.max_deviation <= tol)) rep.violations.push_back(f);
  }
  rep.holds = rep.violations.empty();
  return rep;
}

/// Permutation matrices (state, action) that swap agents i and j of
/// subpopulation l.
struct AgentPermutation {
  Mat state;
  Mat action;
};

inline AgentPermutation agent_transposition(const SubpopulationPartition& p, int l, int i, int j) {
  if (l < 0 || l >= p.L() || i < 0 || j < 0 || i >= p.sizes[l] || j >= p.sizes[l]) {
    throw DimensionError("agent_transposition: index out of range");
  }
  auto make = [](Index n, Index oi, Index oj, Index dim) {
    Eigen::VectorXi perm(n);
    for (Index t = 0; t < n; ++t) perm(t) = static_cast<int>(t);
    for (Index t = 0; t < dim; ++t) std::swap(perm(oi + t), perm(oj + t));
    Mat P = Mat::Zero(n, n);
    for (Index t = 0; t < n; ++t) P(t, perm(t)) = 1.0;
    return P;
  };
  return {make(p.total_state_dim(), p.agent_state_offset(l, i), p.agent_state_offset(l, j), p.state_dims[l]),
          make(p.total_action_dim(), p.agent_action_offset(l, i), p.agent_action_offset(l, j), p.action_dims[l])};
}

}  // namespace hierlqr
