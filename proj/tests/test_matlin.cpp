#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hierlqr/matlin.hpp"
#include "hierlqr/rng.hpp"

using namespace hierlqr;

namespace {

Mat random_symmetric(RngStream& rng, Index n) {
  Mat G = rng.normal_matrix(n, n);
  return 0.5 * (G + G.transpose());
}

Mat random_stable(RngStream& rng, Index n, double rho) {
  Mat F = rng.normal_matrix(n, n);
  return F * (rho / spectral_radius(F));
}

}  // namespace

TEST(Svec, TwoByTwoExample) {
  Mat Z(2, 2);
  Z << 2, 3, 3, 4;
  Vec v = svec(Z);
  ASSERT_EQ(v.size(), 3);
  EXPECT_DOUBLE_EQ(v(0), 2.0);
  EXPECT_DOUBLE_EQ(v(1), 3.0 * std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(v(2), 4.0);
}

TEST(Svec, InnerProductMatchesTrace) {
  RngStream rng(11, 0);
  for (Index n = 1; n <= 6; ++n) {
    Mat X = random_symmetric(rng, n), Y = random_symmetric(rng, n);
    EXPECT_NEAR(svec(X).dot(svec(Y)), (X * Y).trace(), 1e-12 * (1 + X.norm() * Y.norm()));
  }
}

TEST(Svec, RoundTrip) {
  RngStream rng(12, 0);
  for (Index n = 1; n <= 7; ++n) {
    Mat X = random_symmetric(rng, n);
    EXPECT_LE((smat(svec(X)).mat() - X).cwiseAbs().maxCoeff(), 4e-16 * X.cwiseAbs().maxCoeff());
    Vec v = rng.normal_vector(svec_dim(n));
    EXPECT_LE((svec(smat(v)) - v).cwiseAbs().maxCoeff(), 4e-16 * v.cwiseAbs().maxCoeff());
  }
}

TEST(Svec, DiagonalAndIntegerEntriesRoundTripBitwise) {
  Mat Z(3, 3);
  Z << 1, 2, -3, 2, 5, 0.5, -3, 0.5, 7;
  const SymMat back = smat(svec(Z));
  for (Index i = 0; i < 3; ++i) EXPECT_EQ(back(i, i), Z(i, i));
}

TEST(Svec, RejectsAsymmetricAndBadLengths) {
  Mat Z(2, 2);
  Z << 1, 2, 3, 4;
  EXPECT_THROW(svec(Z), SymmetryError);
  EXPECT_THROW(svec(Mat::Zero(2, 3)), DimensionError);
  EXPECT_THROW(smat(Vec::Zero(4)), DimensionError);
  EXPECT_EQ(triangular_root(10), 4);
}

TEST(SymMatType, ChecksSymmetry) {
  Mat Z(2, 2);
  Z << 1, 2, 2 + 1e-6, 1;
  EXPECT_THROW(SymMat{Z}, SymmetryError);
  Z(1, 0) = 2 + 1e-15;
  SymMat S(Z);
  EXPECT_EQ(S(0, 1), S(1, 0));
  EXPECT_THROW(SymMat{Mat::Zero(2, 3)}, DimensionError);
}

TEST(SymKron, MatchesDefinition) {
  RngStream rng(13, 0);
  for (Index n = 1; n <= 5; ++n) {
    Mat A = rng.normal_matrix(n, n), B = rng.normal_matrix(n, n);
    Mat X = random_symmetric(rng, n);
    Mat expect = 0.5 * (A * X * B.transpose() + B * X * A.transpose());
    Vec got = sym_kron(A, B) * svec(X);
    EXPECT_LE((got - svec(expect)).norm(), 1e-12 * (1 + expect.norm()));
  }
}

TEST(SymKron, SymmetricInArguments) {
  RngStream rng(14, 0);
  Mat A = rng.normal_matrix(3, 3), B = rng.normal_matrix(3, 3);
  EXPECT_LE((sym_kron(A, B) - sym_kron(B, A)).norm(), 1e-13);
  // A (x)s A is the svec-space form of X -> A X A^T
  Mat X = random_symmetric(rng, 3);
  EXPECT_LE((sym_kron(A, A) * svec(X) - svec(A * X * A.transpose())).norm(), 1e-12);
}

TEST(Lyapunov, ScalarExample) {
  Mat F(1, 1);
  F << 0.5;
  SymMat X = solve_lyapunov(F, SymMat::identity(1));
  EXPECT_NEAR(X(0, 0), 4.0 / 3.0, 1e-14);
}

TEST(Lyapunov, RandomResidualAndSeries) {
  RngStream rng(15, 0);
  for (Index n : {1, 2, 3, 5, 8}) {
    Mat F = random_stable(rng, n, 0.8);
    Mat G = rng.normal_matrix(n, n);
    SymMat W = SymMat::symmetrized(G * G.transpose() + Mat::Identity(n, n));
    SymMat X = solve_lyapunov(F, W);
    EXPECT_LE(lyapunov_residual(F, W, X), 1e-10);
    // truncated series sum_t F^t W F^t^T
    Mat S = Mat::Zero(n, n), Ft = Mat::Identity(n, n);
    for (int t = 0; t < 2000; ++t) {
      S += Ft * W * Ft.transpose();
      Ft = F * Ft;
    }
    EXPECT_LE((S - X.mat()).norm(), 1e-9 * S.norm());
  }
}

TEST(Lyapunov, DirectAndDoublingAgree) {
  RngStream rng(16, 0);
  const Index n = 12;
  Mat F = random_stable(rng, n, 0.95);
  Mat W = Mat::Identity(n, n);
  Mat a = detail::lyapunov_direct(F, W), b = detail::lyapunov_iterative(F, W);
  EXPECT_LE((a - b).norm(), 1e-9 * a.norm());
}

TEST(Lyapunov, LargeSystemUsesDoubling) {
  RngStream rng(17, 0);
  const Index n = 40;
  Mat F = random_stable(rng, n, 0.9);
  SymMat W = SymMat::identity(n);
  SymMat X = solve_lyapunov(F, W);
  EXPECT_LE(lyapunov_residual(F, W, X), 1e-9);
}

TEST(Lyapunov, UnstableThrows) {
  Mat F(1, 1);
  F << 1.0;
  EXPECT_THROW(solve_lyapunov(F, SymMat::identity(1)), InstabilityError);
  try {
    F << 1.5;
    solve_lyapunov(F, SymMat::identity(1));
  } catch (const InstabilityError& e) {
    EXPECT_NEAR(e.spectral_radius(), 1.5, 1e-12);
  }
}

TEST(Bellman, IsTransposedLyapunov) {
  RngStream rng(18, 0);
  Mat F = random_stable(rng, 4, 0.7);
  SymMat M = SymMat::identity(4);
  SymMat P = solve_bellman(F, M);
  EXPECT_LE((P.mat() - (M.mat() + F.transpose() * P.mat() * F)).norm(), 1e-10);
}

TEST(Dare, ScalarGoldenRatio) {
  Mat A(1, 1), B(1, 1);
  A << 1;
  B << 1;
  DareSolution s = solve_dare(A, B, SymMat::identity(1), SymMat::identity(1));
  const double phi = (1 + std::sqrt(5.0)) / 2;
  EXPECT_NEAR(s.P(0, 0), phi, 1e-10);
  EXPECT_NEAR(s.K(0, 0), phi / (1 + phi), 1e-10);
  EXPECT_NEAR(s.K(0, 0), 0.6180339887, 1e-9);
}

TEST(Dare, RandomFixedPointAndOptimality) {
  RngStream rng(19, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Index n = 3, m = 2;
    Mat A = random_stable(rng, n, 1.1);
    Mat B = rng.normal_matrix(n, m);
    Mat G = rng.normal_matrix(n, n);
    SymMat Q = SymMat::symmetrized(G * G.transpose() + 0.1 * Mat::Identity(n, n));
    SymMat R = SymMat::identity(m);
    DareSolution s = solve_dare(A, B, Q, R);
    EXPECT_LE((riccati_map(A, B, Q, R, s.P) - s.P.mat()).norm(), 1e-9 * s.P.norm());
    EXPECT_LT(spectral_radius(A - B * s.K), 1.0);
    // value Tr(P) matches the closed-loop Bellman solve, and perturbing K increases it
    auto value = [&](const Mat& K) {
      Mat F = A - B * K;
      return solve_bellman(F, SymMat::symmetrized(Q.mat() + K.transpose() * R.mat() * K)).trace();
    };
    const double v0 = value(s.K);
    EXPECT_NEAR(v0, s.P.trace(), 1e-8 * v0);
    for (int k = 0; k < 5; ++k) {
      Mat dK = 1e-3 * rng.normal_matrix(m, n);
      EXPECT_GE(value(s.K + dK), v0 - 1e-10);
    }
  }
}

TEST(Dare, NotStabilizable) {
  Mat A(1, 1), B(1, 1);
  A << 2;
  B << 0;
  EXPECT_THROW(solve_dare(A, B, SymMat::identity(1), SymMat::identity(1)), NotStabilizableError);
}

TEST(Norms, SigmaMinAndOpNorm) {
  Mat M(2, 2);
  M << 3, 0, 0, -0.5;
  EXPECT_NEAR(op_norm(M), 3.0, 1e-14);
  EXPECT_NEAR(sigma_min(M), 0.5, 1e-14);
  EXPECT_NEAR(min_eigenvalue(SymMat(M)), -0.5, 1e-14);
  Mat R(2, 2);
  R << 0, -0.9, 0.9, 0;
  EXPECT_NEAR(spectral_radius(R), 0.9, 1e-14);
}

TEST(Assembly, BlockDiagAndRows) {
  std::vector<Mat> blocks{Mat::Constant(1, 2, 1.0), Mat::Constant(2, 1, 2.0)};
  Mat D = block_diag(blocks);
  ASSERT_EQ(D.rows(), 3);
  ASSERT_EQ(D.cols(), 3);
  EXPECT_EQ(D(0, 1), 1.0);
  EXPECT_EQ(D(2, 2), 2.0);
  EXPECT_EQ(D(0, 2), 0.0);
  Mat S = rows_of({Mat::Ones(1, 2), Mat::Zero(2, 2)});
  EXPECT_EQ(S.rows(), 3);
  EXPECT_THROW(rows_of({Mat::Ones(1, 2), Mat::Zero(1, 3)}), DimensionError);
}

// Random123 known-answer vectors for Philox4x32-10.
TEST(Philox, KnownAnswers) {
  using A4 = std::array<std::uint32_t, 4>;
  using A2 = std::array<std::uint32_t, 2>;
  EXPECT_EQ(RngStream::philox(A4{0, 0, 0, 0}, A2{0, 0}), (A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(RngStream::philox(A4{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, A2{0xffffffffu, 0xffffffffu}),
            (A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(RngStream::philox(A4{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, A2{0xa4093822u, 0x299f31d0u}),
            (A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(Rng, DeterministicAndStreamsDiffer) {
  RngStream a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
    EXPECT_NE(va, d.next_u64());
    seen.insert(va);
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_NE(mix_stream(1, 2), mix_stream(2, 1));
}

TEST(Rng, NormalMoments) {
  RngStream rng(7, 0);
  const int n = 200000;
  double s = 0, s2 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.015);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_NEAR(s4 / n, 3.0, 0.08);
}

TEST(Rng, UniformOpenInterval) {
  RngStream rng(8, 1);
  double mn = 1, mx = 0, sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    mn = std::min(mn, u);
    mx = std::max(mx, u);
    sum += u;
  }
  EXPECT_GT(mn, 0.0);
  EXPECT_LT(mx, 1.0);
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}
