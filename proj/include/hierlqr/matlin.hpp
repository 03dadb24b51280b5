#pragma once

// Dense small-matrix primitives: symmetric vectorization, Lyapunov and
// Riccati solvers, spectral radius, symmetric Kronecker products.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>

#include "hierlqr/errors.hpp"

namespace hierlqr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kSymmetryTol = 1e-12;

/// Largest |Z_ij - Z_ji| relative to the largest |Z_ij|.
inline double relative_asymmetry(const Mat& Z) {
  if (Z.rows() != Z.cols()) {
    throw DimensionError("relative_asymmetry: matrix is not square");
  }
  const double scale = Z.cwiseAbs().maxCoeff();
  if (Z.size() == 0 || scale == 0.0) return 0.0;
  return (Z - Z.transpose()).cwiseAbs().maxCoeff() / scale;
}

/// A square matrix that is symmetric by construction.
///
/// Construction from an arbitrary matrix checks symmetry at kSymmetryTol
/// (relative) and stores (Z + Z^T)/2, which removes roundoff drift.
/// `symmetrized` skips the check and is meant for solver outputs.
class SymMat : public Mat {
 public:
  SymMat() = default;

  template <typename Derived>
  explicit SymMat(const Eigen::MatrixBase<Derived>& m) : Mat(m) {
    if (rows() != cols()) {
      throw DimensionError("SymMat: matrix is " + std::to_string(rows()) + "x" +
                           std::to_string(cols()) + ", expected square");
    }
    const double asym = relative_asymmetry(*this);
    if (asym > kSymmetryTol) {
      throw SymmetryError("SymMat: relative asymmetry " + std::to_string(asym) +
                          " exceeds tolerance");
    }
    symmetrize_in_place();
  }

  template <typename Derived>
  static SymMat symmetrized(const Eigen::MatrixBase<Derived>& m) {
    SymMat out;
    out.Mat::operator=(m);
    if (out.rows() != out.cols()) {
      throw DimensionError("SymMat::symmetrized: matrix is not square");
    }
    out.symmetrize_in_place();
    return out;
  }

  static SymMat identity(Eigen::Index n) { return symmetrized(Mat::Identity(n, n)); }
  static SymMat zero(Eigen::Index n) { return symmetrized(Mat::Zero(n, n)); }

  Eigen::Index dim() const { return rows(); }
  const Mat& mat() const { return *this; }

 private:
  void symmetrize_in_place() {
    Mat sym = 0.5 * (mat() + mat().transpose());
    Mat::operator=(sym);
  }
};

inline Eigen::Index svec_dim(Eigen::Index n) { return n * (n + 1) / 2; }

/// Inverse of svec_dim; throws DimensionError if `len` is not triangular.
inline Eigen::Index triangular_root(Eigen::Index len) {
  if (len <= 0) throw DimensionError("svec length must be positive");
  auto n = static_cast<Eigen::Index>(std::llround((std::sqrt(8.0 * double(len) + 1.0) - 1.0) / 2.0));
  if (svec_dim(n) != len) {
    throw DimensionError("length " + std::to_string(len) + " is not a triangular number");
  }
  return n;
}

/// Upper triangle read row by row, off-diagonal entries scaled by sqrt(2),
/// so that <svec(A), svec(B)> = Tr(AB) for symmetric A, B.
inline Vec svec(const Mat& Z) {
  if (Z.rows() != Z.cols()) throw DimensionError("svec: matrix is not square");
  const double asym = relative_asymmetry(Z);
  if (asym > kSymmetryTol) {
    throw SymmetryError("svec: relative asymmetry " + std::to_string(asym) +
                        " exceeds tolerance");
  }
  const Eigen::Index n = Z.rows();
  Vec out(svec_dim(n));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    out(k++) = Z(i, i);
    for (Eigen::Index j = i + 1; j < n; ++j) out(k++) = M_SQRT2 * 0.5 * (Z(i, j) + Z(j, i));
  }
  return out;
}

inline SymMat smat(const Vec& v) {
  const Eigen::Index n = triangular_root(v.size());
  Mat Z(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Z(i, i) = v(k++);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Z(i, j) = Z(j, i) = v(k++) / M_SQRT2;
    }
  }
  return SymMat::symmetrized(Z);
}

inline void require_square(const Mat& M, const char* what) {
  if (M.rows() != M.cols() || M.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " +
                         std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
  }
}

inline double spectral_radius(const Mat& F) {
  require_square(F, "spectral_radius");
  Eigen::EigenSolver<Mat> es(F, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Operator 2-norm.
inline double op_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues()(0);
}

/// Smallest singular value of a square matrix.
inline double sigma_min(const Mat& M) {
  require_square(M, "sigma_min");
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues().minCoeff();
}

inline double min_eigenvalue(const SymMat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S.mat(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Returns L with L L^T = S for positive semi-definite S (tiny negative
/// eigenvalues from roundoff are clipped to zero).
inline Mat psd_factor(const SymMat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S.mat());
  Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

// Dimension cutoff between the direct Kronecker solve and the iterative one.
inline constexpr Eigen::Index kDirectLyapunovMaxDim = 32;

namespace detail {

inline Mat lyapunov_direct(const Mat& F, const Mat& W) {
  const Eigen::Index d = F.rows();
  const Eigen::Index n = d * d;
  // Column-major vec: vec(F X F^T) = (F kron F) vec(X).
  Mat system = Mat::Identity(n, n);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      system.block(i * d, j * d, d, d) -= F(i, j) * F;
    }
  }
  Eigen::Map<const Vec> rhs(W.data(), n);
  Vec x = system.partialPivLu().solve(rhs);
  return Eigen::Map<Mat>(x.data(), d, d);
}

// Fixed-point iteration X <- W + F X F^T, accelerated by repeated squaring
// of F so that iteration k accounts for 2^k terms of the series.
inline Mat lyapunov_iterative(const Mat& F, const Mat& W) {
  Mat X = W;
  Mat Fk = F;
  for (int k = 0; k < 200; ++k) {
    Mat term = Fk * X * Fk.transpose();
    X += term;
    if (term.norm() <= 1e-16 * X.norm()) break;
    Fk = Fk * Fk;
  }
  return X;
}

}  // namespace detail

/// Solves Sigma = W + F Sigma F^T for Schur-stable F.
inline SymMat solve_lyapunov(const Mat& F, const SymMat& W) {
  require_square(F, "solve_lyapunov");
  if (W.dim() != F.rows()) throw DimensionError("solve_lyapunov: W and F dimensions differ");
  const double rho = spectral_radius(F);
  if (!(rho < 1.0)) throw InstabilityError("solve_lyapunov: F is not Schur stable", rho);
  Mat X = F.rows() <= kDirectLyapunovMaxDim ? detail::lyapunov_direct(F, W)
                                            : detail::lyapunov_iterative(F, W);
  return SymMat::symmetrized(X);
}

/// Solves P = M + F^T P F (the adjoint Lyapunov equation).
inline SymMat solve_bellman(const Mat& F, const SymMat& M) {
  require_square(F, "solve_bellman");
  return solve_lyapunov(F.transpose(), M);
}

inline double lyapunov_residual(const Mat& F, const SymMat& W, const SymMat& X) {
  return (X.mat() - W.mat() - F * X.mat() * F.transpose()).norm();
}

struct DareSolution {
  SymMat P;
  Mat K;
  int iterations = 0;
  double relative_residual = 0.0;
};

inline constexpr int kDareMaxIterations = 100000;
inline constexpr double kDareTol = 1e-12;

inline Mat riccati_map(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& P) {
  Mat S = R + B.transpose() * P * B;
  Mat BtPA = B.transpose() * P * A;
  return Q + A.transpose() * P * A - BtPA.transpose() * S.ldlt().solve(BtPA);
}

/// Riccati value iteration from P = Q until the relative update falls
/// below 1e-12. Throws NotStabilizableError on divergence or when the
/// iteration cap is hit.
inline DareSolution solve_dare(const Mat& A, const Mat& B, const SymMat& Q, const SymMat& R) {
  require_square(A, "solve_dare");
  if (B.rows() != A.rows() || Q.dim() != A.rows() || R.dim() != B.cols()) {
    throw DimensionError("solve_dare: inconsistent dimensions");
  }
  const double blowup = 1e14 * std::max(1.0, Q.norm() + R.norm());
  Mat P = Q;
  DareSolution out;
  bool converged = false;
  for (int it = 1; it <= kDareMaxIterations; ++it) {
    Mat next = riccati_map(A, B, Q, R, P);
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite() || next.norm() > blowup) {
      throw NotStabilizableError("solve_dare: Riccati iteration diverged");
    }
    const double step = (next - P).norm();
    P = std::move(next);
    out.iterations = it;
    if (step <= kDareTol * std::max(P.norm(), std::numeric_limits<double>::min())) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw NotStabilizableError("solve_dare: no convergence within iteration cap");
  }
  Mat S = R + B.transpose() * P * B;
  out.K = S.ldlt().solve(B.transpose() * P * A);
  const double rho = spectral_radius(A - B * out.K);
  if (!(rho < 1.0)) {
    throw NotStabilizableError("solve_dare: closed loop of the fixed point is unstable");
  }
  out.P = SymMat::symmetrized(P);
  out.relative_residual =
      (riccati_map(A, B, Q, R, out.P) - out.P.mat()).norm() / std::max(out.P.norm(), 1e-300);
  return out;
}

/// Operator on svec-space with sym_kron(A, B) svec(X) = svec((A X B^T + B X A^T)/2).
inline Mat sym_kron(const Mat& A, const Mat& B) {
  require_square(A, "sym_kron");
  if (B.rows() != A.rows() || B.cols() != A.cols()) {
    throw DimensionError("sym_kron: dimension mismatch");
  }
  const Eigen::Index n = A.rows();
  const Eigen::Index m = svec_dim(n);
  Mat out(m, m);
  Vec e = Vec::Zero(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    e.setZero();
    e(c) = 1.0;
    const SymMat X = smat(e);
    Mat Y = A * X.mat() * B.transpose();
    out.col(c) = svec(SymMat::symmetrized(Y));
  }
  return out;
}

/// Stacks matrices with equal column counts vertically.
inline Mat rows_of(std::initializer_list<Mat> blocks) {
  Eigen::Index r = 0, c = -1;
  for (const auto& b : blocks) {
    if (c >= 0 && b.cols() != c) throw DimensionError("rows_of: column counts differ");
    c = b.cols();
    r += b.rows();
  }
  Mat out(r, std::max<Eigen::Index>(c, 0));
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

/// Block-diagonal assembly.
template <typename Range>
Mat block_diag(const Range& blocks) {
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    r += b.rows();
    c += b.cols();
  }
  Mat out = Mat::Zero(r, c);
  Eigen::Index ro = 0, co = 0;
  for (const auto& b : blocks) {
    out.block(ro, co, b.rows(), b.cols()) = b;
    ro += b.rows();
    co += b.cols();
  }
  return out;
}

}  // namespace hierlqr
