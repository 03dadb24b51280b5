#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "hierlqr/npg.hpp"
#include "test_support.hpp"

using namespace hierlqr;
using namespace hierlqr::testing;

namespace {

TrainConfig oracle_config(int N) {
  TrainConfig c;
  c.mode = CriticMode::Oracle;
  c.N_outer = N;
  return c;
}

struct Hier {
  GlobalLQRSystem sys;
  AuxiliaryEnsemble ens;
};

Hier make_hier(std::uint64_t seed, double scale = 0.1) {
  Hier h;
  h.sys = generate_system(SubpopulationPartition({2, 3}, {1, 1}, {1, 1}), seed, scale);
  h.ens = build_auxiliary(h.sys);
  return h;
}

}  // namespace

TEST(Stepsize, ScalarExample) {
  LQRInstance inst = scalar_instance(0.5, 1.0);
  EXPECT_DOUBLE_EQ(default_stepsize(inst, 2.0), 1.0 / 3.0);
  EXPECT_THROW(default_stepsize(inst, 0.0), ConfigError);
}

TEST(Stepsize, NaturalStep) {
  Mat K = Mat::Constant(2, 3, 0.7);
  EXPECT_EQ(natural_step(K, Mat::Zero(2, 3), 0.5), K);
  EXPECT_LE((natural_step(K, Mat::Ones(2, 3), 0.5) - Mat::Constant(2, 3, 0.2)).norm(), 1e-15);
  EXPECT_THROW(natural_step(K, Mat::Zero(3, 2), 0.5), DimensionError);
}

TEST(TrainSingle, FixedPointAtOptimum) {
  RngStream rng(51, 0);
  LQRInstance inst = random_instance(rng, 3, 2);
  SystemHistory h = train_single(inst, optimal_policy(inst).K, oracle_config(10));
  ASSERT_EQ(h.iters.size(), 11u);
  for (const auto& r : h.iters) EXPECT_LE(std::abs(r.gap), 1e-9 * h.C_star);
}

// Recomputes each oracle step and checks monotone decrease and the per-step
// contraction 1 - eta sigma_min(Phi) sigma_min(R) / ||Sigma_K*||.
TEST(TrainSingle, OracleLinearConvergence) {
  RngStream rng(52, 0);
  for (int t = 0; t < 5; ++t) {
    LQRInstance inst = random_instance(rng, 2 + t % 2, 1 + t % 2);
    const Mat K0 = random_stable_gain(rng, inst, 1.0, 0.9);
    SystemHistory h = train_single(inst, K0, oracle_config(50));
    ASSERT_FALSE(h.aborted);
    const double C0 = policy_cost(inst, {K0, 0.0});
    EXPECT_DOUBLE_EQ(h.eta, default_stepsize(inst, C0));
    const Mat Ks = optimal_policy(inst).K;
    const double nS = op_norm(analyze_policy(inst, {Ks, 0.0}).Sigma);
    const double rate = 1 - h.eta * sigma_min(inst.Phi) * sigma_min(inst.R) / nS;
    EXPECT_NEAR(h.contraction, rate, 1e-12);
    for (std::size_t n = 1; n < h.iters.size(); ++n) {
      // independent replay of the actor step
      const PolicyAnalysis prev = analyze_policy(inst, {h.iters[n - 1].K, 0.0});
      EXPECT_LE((h.iters[n].K - (h.iters[n - 1].K - h.eta * prev.E)).norm(), 1e-12);
      EXPECT_LE(h.iters[n].gap, h.iters[n - 1].gap + 1e-9);
      EXPECT_LE(h.iters[n].gap, rate * h.iters[n - 1].gap + 1e-9);
    }
    EXPECT_LE(h.iters.back().gap, std::pow(rate, 50) * h.iters.front().gap + 1e-9);
  }
}

TEST(TrainSingle, AbortsWhenGainLeavesStableRegion) {
  LQRInstance inst = scalar_instance(0.5, 1.0);
  TrainConfig cfg = oracle_config(10);
  cfg.eta_override = {5.0};
  cfg.enforce_oracle_bounds = false;
  SystemHistory h = train_single(inst, Mat::Constant(1, 1, 0.1), cfg);
  EXPECT_TRUE(h.aborted);
  EXPECT_FALSE(h.iters.empty());
  EXPECT_NE(h.abort_reason.find("stable"), std::string::npos);
}

TEST(TrainSingle, EnforcedBoundsThrowOnOversizedStep) {
  LQRInstance inst = scalar_instance(0.5, 1.0);
  TrainConfig cfg = oracle_config(10);
  cfg.eta_override = {1.5};
  EXPECT_THROW(train_single(inst, Mat::Zero(1, 1), cfg), IntegrityError);
}

TEST(TrainSingle, ModelFreeReducesGap) {
  LQRInstance inst = scalar_instance(0.2, 0.5);
  TrainConfig cfg;
  cfg.N_outer = 15;
  cfg.T_inner = 20000;
  cfg.sigma_explore = {1.0};
  SystemHistory h = train_single(inst, Mat::Zero(1, 1), cfg);
  ASSERT_FALSE(h.aborted);
  EXPECT_LT(h.iters.back().gap, 0.2 * h.iters.front().gap);
  EXPECT_FALSE(std::isnan(h.iters.back().critic_err));
  EXPECT_EQ(h.cost_source, "oracle");
}

TEST(TrainSingle, RolloutCostSource) {
  LQRInstance inst = scalar_instance(0.2, 0.5);
  TrainConfig cfg;
  cfg.N_outer = 1;
  cfg.T_inner = 1000;
  cfg.cost_from_oracle = false;
  SystemHistory h = train_single(inst, Mat::Zero(1, 1), cfg);
  EXPECT_EQ(h.cost_source, "rollout");
  const double C0 = policy_cost(inst, {Mat::Zero(1, 1), 1.0});
  EXPECT_NEAR(h.eta, default_stepsize(inst, C0), 0.05 * h.eta);
}

TEST(TrainConfigCheck, RejectsBadLists) {
  TrainConfig cfg;
  cfg.sigma_explore = {1.0, 1.0};
  EXPECT_THROW(cfg.validate(3), ConfigError);
  cfg.sigma_explore = {0.0};
  EXPECT_THROW(cfg.validate(3), ConfigError);
  cfg.mode = CriticMode::Oracle;
  EXPECT_NO_THROW(cfg.validate(3));
  cfg.eta_override = {-1.0};
  EXPECT_THROW(cfg.validate(3), ConfigError);
}

TEST(Hierarchical, ProblemsSkipSingletons) {
  GlobalLQRSystem sys = generate_system(SubpopulationPartition({1, 3}, {1, 2}, {1, 1}), 2, 0.1);
  auto probs = auxiliary_problems(build_auxiliary(sys));
  ASSERT_EQ(probs.size(), 2u);
  EXPECT_EQ(probs[0].id, "S2");
  EXPECT_EQ(probs[0].multiplier, 3.0);
  EXPECT_EQ(probs[1].id, "MF");
}

TEST(Hierarchical, OracleRunConvergesAtWorstRate) {
  Hier h = make_hier(1);
  TrainHistory th = train_hierarchical(h.sys, h.ens, zero_gains(h.sys.partition), oracle_config(50));
  ASSERT_FALSE(th.aborted);
  ASSERT_EQ(th.total_gap.size(), 51u);
  double worst = 0.0;
  for (const auto& s : th.systems) worst = std::max(worst, s.contraction);
  for (std::size_t n = 1; n < th.total_gap.size(); ++n) {
    EXPECT_LE(th.total_gap[n], th.total_gap[n - 1] + 1e-9);
    EXPECT_LE(th.total_gap[n], std::pow(worst, double(n)) * th.total_gap[0] + 1e-9);
  }
  EXPECT_GT(th.M, 0.0);
  for (const auto& c : th.composed_checks) EXPECT_LE(c.rel_err, 1e-6);
  // the composed final gain is stable for the global system
  const LQRInstance glob{h.sys.A, h.sys.B, h.sys.Q, h.sys.R, global_noise_covariance(h.sys)};
  EXPECT_TRUE(is_stable(glob, final_global_gain(h.ens, zero_gains(h.sys.partition), th)));
}

TEST(Hierarchical, FlatFromOptimalGains) {
  Hier h = make_hier(2);
  HierarchicalInit init = zero_gains(h.sys.partition);
  for (const auto& p : auxiliary_problems(h.ens)) {
    (p.subpopulation >= 0 ? init.K_sub[p.subpopulation] : init.K_bar) = optimal_policy(p.inst).K;
  }
  TrainHistory th = train_hierarchical(h.sys, h.ens, init, oracle_config(5));
  for (double g : th.total_gap) EXPECT_LE(std::abs(g), 1e-9);
}

TEST(Hierarchical, ComposedCostEqualsSumOfParts) {
  RngStream rng(53, 0);
  for (int t = 0; t < 5; ++t) {
    Hier h = make_hier(10 + t, 0.3);
    HierarchicalInit g = zero_gains(h.sys.partition);
    for (const auto& p : auxiliary_problems(h.ens)) {
      (p.subpopulation >= 0 ? g.K_sub[p.subpopulation] : g.K_bar) = random_stable_gain(rng, p.inst, 0.3);
    }
    ComposedCheck c = composed_cost_check(h.sys, h.ens, g.K_sub, g.K_bar);
    EXPECT_LE(c.rel_err, 1e-6);
  }
}

TEST(Hierarchical, ThreadCountDoesNotChangeResults) {
  Hier h = make_hier(1);
  TrainConfig cfg;
  cfg.N_outer = 3;
  cfg.T_inner = 2000;
  cfg.seed = 17;
  auto run = [&](const char* threads) {
    setenv("HIERLQR_THREADS", threads, 1);
    std::ostringstream os;
    write_history_csv(os, train_hierarchical(h.sys, h.ens, zero_gains(h.sys.partition), cfg));
    unsetenv("HIERLQR_THREADS");
    return os.str();
  };
  const std::string one = run("1"), three = run("3");
  EXPECT_EQ(one, three);
  EXPECT_EQ(one.substr(0, one.find('\n')), "n,system_id,cost,gap,critic_err,eta,wall_ms");
  // 4 iterations x (3 systems + total)
  EXPECT_EQ(std::count(one.begin(), one.end(), '\n'), 1 + 4 * 4);
}

TEST(Hierarchical, ErrorsKeepTypeAndNameTheSystem) {
  Hier h = make_hier(1);
  HierarchicalInit init = zero_gains(h.sys.partition);
  init.K_bar = Mat::Constant(2, 2, -50.0);
  try {
    train_hierarchical(h.sys, h.ens, init, oracle_config(2));
    FAIL() << "expected InstabilityError";
  } catch (const InstabilityError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("system MF: ", 0), 0u) << e.what();
  }
}
