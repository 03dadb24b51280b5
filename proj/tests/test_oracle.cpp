#include <gtest/gtest.h>

#include <cmath>

#include "hierlqr/oracle.hpp"
#include "test_support.hpp"

using namespace hierlqr;
using namespace hierlqr::testing;

TEST(Analyze, ScalarClosedForm) {
  LQRInstance inst = scalar_instance(0.9, 1.0);
  PolicyAnalysis a = analyze_policy(inst, {Mat::Constant(1, 1, 0.4), 0.0});
  EXPECT_NEAR(a.Sigma(0, 0), 4.0 / 3.0, 1e-13);
  EXPECT_NEAR(a.cost, 1.16 * 4.0 / 3.0, 1e-13);
  EXPECT_NEAR(a.rho, 0.5, 1e-14);
}

TEST(Analyze, ScalarGradientClosedForm) {
  const double a = 0.7, b = 0.8, q = 1.3, r = 0.6, phi = 0.9;
  LQRInstance inst = scalar_instance(a, b, q, r, phi);
  for (double K : {-0.2, 0.0, 0.3, 1.1}) {
    const double F = a - b * K, den = 1 - F * F;
    const double expect = 2 * r * K * phi / den - 2 * b * F * (q + r * K * K) * phi / (den * den);
    PolicyAnalysis an = analyze_policy(inst, {Mat::Constant(1, 1, K), 0.0});
    EXPECT_NEAR(an.grad(0, 0), expect, 1e-11 * (1 + std::abs(expect)));
  }
}

TEST(Analyze, ExplorationNoiseCost) {
  // sigma > 0 adds sigma^2 Tr R and the extra state noise sigma^2 B B^T
  LQRInstance inst = scalar_instance(0.5, 1.0);
  const double s = 0.5, K = 0.2, F = 0.3;
  const double Sigma = (1 + s * s) / (1 - F * F);
  PolicyAnalysis an = analyze_policy(inst, {Mat::Constant(1, 1, K), s});
  EXPECT_NEAR(an.cost, (1 + K * K) * Sigma + s * s, 1e-13);
}

TEST(Analyze, UnstableGainThrows) {
  LQRInstance inst = scalar_instance(1.2, 1.0);
  EXPECT_THROW(analyze_policy(inst, {Mat::Zero(1, 1), 0.0}), InstabilityError);
  EXPECT_FALSE(is_stable(inst, Mat::Zero(1, 1)));
  EXPECT_TRUE(is_stable(inst, Mat::Constant(1, 1, 1.0)));
}

TEST(Analyze, ValidateRejectsSingularR) {
  LQRInstance inst = scalar_instance(0.5, 1.0, 1.0, 0.0);
  EXPECT_THROW(inst.validate(), AssumptionError);
}

TEST(Optimal, NaturalGradientVanishes) {
  RngStream rng(31, 0);
  for (int t = 0; t < 5; ++t) {
    LQRInstance inst = random_instance(rng, 3, 2, 1.05);
    OptimalPolicy opt = optimal_policy(inst);
    PolicyAnalysis a = analyze_policy(inst, {opt.K, 0.0});
    EXPECT_LE(a.E.norm(), 1e-7);
    EXPECT_LE((a.P.mat() - opt.P.mat()).norm(), 1e-8 * opt.P.norm());
  }
}

TEST(Gradient, FiniteDifferences) {
  RngStream rng(32, 0);
  for (int t = 0; t < 20; ++t) {
    const Index d = 1 + t % 4, k = 1 + t % 3;
    LQRInstance inst = random_instance(rng, d, k);
    Mat K = random_stable_gain(rng, inst);
    GradientCheck g = gradient_fd_check(inst, {K, 0.3 * (t % 2)});
    EXPECT_LE(g.max_rel_err, 1e-4) << "trial " << t;
  }
}

TEST(ValueVector, ScalarExample) {
  LQRInstance inst = scalar_instance(0.5, 1.0);
  ValueVector vv = value_vector(inst, {Mat::Zero(1, 1), 0.0});
  ASSERT_EQ(vv.delta_star.size(), 3);
  EXPECT_NEAR(vv.delta_star(0), 4.0 / 3.0, 1e-13);
  EXPECT_NEAR(vv.delta_star(1), 2.0 / 3.0 * std::sqrt(2.0), 1e-13);
  EXPECT_NEAR(vv.delta_star(2), 7.0 / 3.0, 1e-13);
}

// Q(x,u) = c(x,u) - C + E[V(x')] with V(x) = x^T P x - Tr(P Sigma).
TEST(ValueVector, BellmanIdentity) {
  RngStream rng(33, 0);
  LQRInstance inst = random_instance(rng, 3, 2);
  LinearGaussianPolicy pol{random_stable_gain(rng, inst), 0.4};
  PolicyAnalysis a = analyze_policy(inst, pol);
  ValueVector vv = value_vector(inst, pol);
  for (int t = 0; t < 10; ++t) {
    Vec x = rng.normal_vector(3), u = rng.normal_vector(2);
    Vec v(5);
    v << x, u;
    const Vec xn = inst.A * x + inst.B * u;
    const double expect = x.dot(inst.Q * x) + u.dot(inst.R * u) - a.cost + xn.dot(a.P * xn) +
                          (a.P.mat() * inst.Phi.mat()).trace() - (a.P.mat() * a.Sigma.mat()).trace();
    EXPECT_NEAR(vv.q_value(feature(v)), expect, 1e-10 * (1 + std::abs(expect)));
  }
}

TEST(ValueVector, FeatureIsSvecOfOuterProduct) {
  Vec v(3);
  v << 1, -2, 0.5;
  EXPECT_LE((feature(v) - svec(v * v.transpose())).norm(), 1e-15);
}

TEST(ValueVector, NaturalGradientRecovery) {
  RngStream rng(34, 0);
  for (int t = 0; t < 10; ++t) {
    LQRInstance inst = random_instance(rng, 1 + t % 3, 1 + t % 2);
    LinearGaussianPolicy pol{random_stable_gain(rng, inst), 0.5};
    Mat E = recover_natural_gradient(value_vector(inst, pol).delta_star, pol.K);
    EXPECT_LE((E - analyze_policy(inst, pol).E).cwiseAbs().maxCoeff(), 1e-10);
  }
}

namespace {

// E[phi phi^T] and E[phi phi'^T] entrywise from Isserlis' theorem, where
// v ~ N(0, S) and v' = Kb v + noise has cross covariance Cov(v, v') = S Kb^T.
Mat theta_isserlis(const Mat& S, const Mat& Kb) {
  const Index n = S.rows(), m = svec_dim(n);
  std::vector<std::pair<Index, Index>> idx;
  std::vector<double> w;
  for (Index i = 0; i < n; ++i)
    for (Index j = i; j < n; ++j) {
      idx.emplace_back(i, j);
      w.push_back(i == j ? 1.0 : std::sqrt(2.0));
    }
  const Mat C = S * Kb.transpose();
  Mat T(m, m);
  for (Index r = 0; r < m; ++r)
    for (Index c = 0; c < m; ++c) {
      const auto [i, j] = idx[r];
      const auto [k, l] = idx[c];
      const double same = S(i, j) * S(k, l) + S(i, k) * S(j, l) + S(i, l) * S(j, k);
      const double next = S(i, j) * S(k, l) + C(i, k) * C(j, l) + C(i, l) * C(j, k);
      T(r, c) = w[r] * w[c] * (same - next);
    }
  return T;
}

}  // namespace

TEST(Theta, MatchesIsserlisOracle) {
  RngStream rng(35, 0);
  for (int t = 0; t < 4; ++t) {
    LQRInstance inst = random_instance(rng, 1 + t % 2, 1);
    LinearGaussianPolicy pol{random_stable_gain(rng, inst), 0.7};
    GtdOperator op = theta_matrix(inst, pol);
    PairChain pc = pair_chain(inst, pol, analyze_policy(inst, pol));
    Mat expect = theta_isserlis(pc.Sigma_v, pc.K_breve);
    EXPECT_LE((op.Theta - expect).norm(), 1e-10 * expect.norm());
    EXPECT_LE(op.dual_residual, 1e-9 * op.d_vec.norm());
    EXPECT_GT(op.sigma_min_theta, 0.0);
  }
}

TEST(Theta, PairChainIsStationary) {
  RngStream rng(36, 0);
  LQRInstance inst = random_instance(rng, 2, 1);
  LinearGaussianPolicy pol{random_stable_gain(rng, inst), 0.5};
  PairChain pc = pair_chain(inst, pol, analyze_policy(inst, pol));
  // S = Kb S Kb^T + Cov([w; -K w + sigma e])
  Mat S = pc.Sigma_v;
  Mat next = pc.K_breve * S * pc.K_breve.transpose();
  Mat noise = Mat::Zero(3, 3);
  noise.topLeftCorner(2, 2) = inst.Phi;
  noise.topRightCorner(2, 1) = -inst.Phi.mat() * pol.K.transpose();
  noise.bottomLeftCorner(1, 2) = -pol.K * inst.Phi.mat();
  noise.bottomRightCorner(1, 1) = pol.K * inst.Phi.mat() * pol.K.transpose() + 0.25 * Mat::Identity(1, 1);
  EXPECT_LE((next + noise - S).norm(), 1e-10 * S.norm());
}

TEST(Theta, RequiresExploration) {
  LQRInstance inst = scalar_instance(0.5, 1.0);
  EXPECT_THROW(theta_matrix(inst, {Mat::Zero(1, 1), 0.0}), ConfigError);
}

TEST(Domination, SandwichOnRandomPolicies) {
  RngStream rng(37, 0);
  for (int t = 0; t < 5; ++t) {
    LQRInstance inst = random_instance(rng, 2 + t % 2, 1 + t % 2);
    const PolicyAnalysis opt = analyze_policy(inst, {optimal_policy(inst).K, 0.0});
    for (int s = 0; s < 50; ++s) {
      DominationBounds b = dom_bounds(inst, {random_stable_gain(rng, inst, 1.0), 0.0}, opt);
      EXPECT_TRUE(b.holds) << b.lower << " <= " << b.gap << " <= " << b.upper;
    }
  }
}

TEST(Advantage, TelescopingIdentity) {
  RngStream rng(38, 0);
  for (int t = 0; t < 5; ++t) {
    LQRInstance inst = random_instance(rng, 3, 2);
    Mat K = random_stable_gain(rng, inst), Kp = random_stable_gain(rng, inst);
    AdvantageCheck c = advantage_identity_check(inst, K, Kp, rng.normal_vector(3));
    EXPECT_LE(c.residual, 1e-8 * (1 + std::abs(c.lhs)));
  }
}

TEST(Advantage, LowerBoundIsMinimum) {
  RngStream rng(39, 0);
  LQRInstance inst = random_instance(rng, 3, 2);
  Mat K = random_stable_gain(rng, inst);
  PolicyAnalysis a = analyze_policy(inst, {K, 0.0});
  for (int t = 0; t < 20; ++t) {
    Vec x = rng.normal_vector(3);
    const double lb = advantage_lower_bound(inst, a, x);
    EXPECT_GE(advantage(inst, a, K, K + rng.normal_matrix(2, 3), x), lb - 1e-12);
  }
}

TEST(Bounds, SigmaAndPNorms) {
  RngStream rng(40, 0);
  for (int t = 0; t < 10; ++t) {
    LQRInstance inst = random_instance(rng, 2, 2);
    BoundMats b = diagnostics_bound_mats(inst, {random_stable_gain(rng, inst), 0.2});
    EXPECT_TRUE(b.sigma_holds);
    EXPECT_TRUE(b.p_holds);
  }
}
