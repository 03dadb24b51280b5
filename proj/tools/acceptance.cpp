// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hierlqr/decomp.hpp"
#include "hierlqr/gtd.hpp"
#include "hierlqr/npg.hpp"
#include "hierlqr/oracle.hpp"
#include "hierlqr/sim.hpp"
#include "hierlqr/sysmodel.hpp"

using namespace hierlqr;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SubpopulationPartition random_partition(RngStream& rng, int max_L, int max_n, int max_d, int max_k) {
  auto pick = [&](int hi) { return 1 + static_cast<int>(rng.next_u64() % std::uint64_t(hi)); };
  const int L = pick(max_L);
  std::vector<int> n, d, k;
  for (int l = 0; l < L; ++l) {
    n.push_back(pick(max_n));
    d.push_back(pick(max_d));
    k.push_back(pick(max_k));
  }
  return SubpopulationPartition(n, d, k);
}

SymMat random_pd(RngStream& rng, Index n, double floor) {
  Mat G = rng.normal_matrix(n, n);
  return SymMat::symmetrized(G * G.transpose() / double(n) + floor * Mat::Identity(n, n));
}

LQRInstance random_instance(RngStream& rng, Index d, Index k, double rho) {
  Mat A = rng.normal_matrix(d, d);
  return {A * (rho / spectral_radius(A)), rng.normal_matrix(d, k) / std::sqrt(double(d)), random_pd(rng, d, 0.5),
          random_pd(rng, k, 0.5), random_pd(rng, d, 0.5)};
}

Mat perturbed_stable_gain(RngStream& rng, const LQRInstance& inst, double scale, double max_rho) {
  const Mat Ks = optimal_policy(inst).K;
  Mat D = scale * rng.normal_matrix(Ks.rows(), Ks.cols());
  while (closed_loop_radius(inst, Ks + D) >= max_rho) D *= 0.5;
  return Ks + D;
}

HierarchicalInit random_hierarchical_gains(RngStream& rng, const AuxiliaryEnsemble& ens, double scale) {
  HierarchicalInit g = zero_gains(ens.partition);
  for (const auto& p : auxiliary_problems(ens)) {
    (p.subpopulation >= 0 ? g.K_sub[p.subpopulation] : g.K_bar) = perturbed_stable_gain(rng, p.inst, scale, 0.95);
  }
  return g;
}

// 1
Outcome decomposition_identity() {
  RngStream rng(1001, 0);
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    const auto p = random_partition(rng, 3, 6, 3, 2);
    const GlobalLQRSystem sys = generate_system(p, 100 + s, 0.5);
    const AuxiliaryEnsemble ens = build_auxiliary(sys);
    for (int t = 0; t < 1000; ++t) {
      const Vec x = 2.0 * rng.normal_vector(p.total_state_dim());
      const Vec u = 2.0 * rng.normal_vector(p.total_action_dim());
      const double c = global_cost(sys, x, u);
      const double parts = auxiliary_costs(ens, to_coordinates(p, x, u)).total();
      worst = std::max(worst, std::abs(c - parts) / (1.0 + std::abs(c)));
    }
  }
  return {worst <= 1e-10, "max |c_gt - c_bar - sum c_tilde| / (1+|c_gt|) = " + fmt("%.3g", worst)};
}

// 2
Outcome pathwise() {
  RngStream rng(1002, 0);
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    const auto p = random_partition(rng, 3, 6, 3, 2);
    const GlobalLQRSystem sys = generate_system(p, 200 + s, 0.5);
    const AuxiliaryEnsemble ens = build_auxiliary(sys);
    const HierarchicalInit g = random_hierarchical_gains(rng, ens, 0.3);
    HierarchicalPolicy pol;
    for (const auto& K : g.K_sub) pol.subsystems.push_back({K, 0.5});
    pol.mean_field = {g.K_bar, 0.5};
    const CouplingResult r = pathwise_coupling(sys, ens, pol, 100, rng, rng.normal_vector(p.total_state_dim()));
    worst = std::max(worst, r.max_deviation);
  }
  return {worst <= 1e-10, "max state deviation over 100 steps = " + fmt("%.3g", worst)};
}

// 3
Outcome ergodic_decomposition() {
  RngStream rng(1003, 0);
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const auto p = random_partition(rng, 3, 6, 3, 2);
    const GlobalLQRSystem sys = generate_system(p, 300 + s, 0.5);
    const AuxiliaryEnsemble ens = build_auxiliary(sys);
    const HierarchicalInit g = random_hierarchical_gains(rng, ens, 0.5);
    worst = std::max(worst, composed_cost_check(sys, ens, g.K_sub, g.K_bar).rel_err);
  }
  return {worst <= 1e-6, "max relative difference = " + fmt("%.3g", worst)};
}

// 4
Outcome gradient() {
  RngStream rng(1004, 0);
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    const Index d = 1 + s % 4, k = 1 + s % 3;
    const LQRInstance inst = random_instance(rng, d, k, 0.9);
    const Mat K = perturbed_stable_gain(rng, inst, 0.5, 0.95);
    worst = std::max(worst, gradient_fd_check(inst, {K, 0.0}).max_rel_err);
  }
  return {worst <= 1e-4, "max relative error vs central differences = " + fmt("%.3g", worst)};
}

// 5
Outcome domination() {
  RngStream rng(1005, 0);
  int violations = 0;
  double tightest = 1e300;
  for (int i = 0; i < 5; ++i) {
    const LQRInstance inst = random_instance(rng, 2 + i % 3, 1 + i % 2, 0.9);
    const PolicyAnalysis opt = analyze_policy(inst, {optimal_policy(inst).K, 0.0});
    for (int s = 0; s < 50; ++s) {
      const DominationBounds b = dom_bounds(inst, {perturbed_stable_gain(rng, inst, 1.0, 0.98), 0.0}, opt);
      violations += !b.holds;
      tightest = std::min({tightest, b.gap - b.lower, b.upper - b.gap});
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in 250 policies, smallest margin " +
                               fmt("%.3g", tightest)};
}

bool replay_oracle(const SystemHistory& h, double& worst_ratio) {
  bool ok = !h.aborted;
  for (std::size_t n = 1; n < h.iters.size(); ++n) {
    ok = ok && h.iters[n].gap <= h.iters[n - 1].gap + 1e-9;
    ok = ok && h.iters[n].gap <= h.contraction * h.iters[n - 1].gap + 1e-9;
  }
  const double N = double(h.iters.size() - 1);
  const double bound = std::pow(h.contraction, N) * h.iters.front().gap;
  ok = ok && h.iters.back().gap <= bound + 1e-9;
  if (h.iters.front().gap > 0) worst_ratio = std::max(worst_ratio, h.iters.back().gap / h.iters.front().gap);
  return ok;
}

// 6
Outcome oracle_convergence() {
  RngStream rng(1006, 0);
  TrainConfig cfg;
  cfg.mode = CriticMode::Oracle;
  cfg.N_outer = 50;
  cfg.enforce_oracle_bounds = false;
  bool ok = true;
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const LQRInstance inst = random_instance(rng, 2 + i % 2, 1 + i % 2, 0.95);
    const Mat K0 = perturbed_stable_gain(rng, inst, 1.0, 0.95);
    ok = replay_oracle(train_single(inst, K0, cfg, i, "R" + std::to_string(i)), worst) && ok;
  }
  const GlobalLQRSystem sys = generate_system(SubpopulationPartition({2, 3}, {2, 1}, {1, 1}), 6, 0.3);
  const AuxiliaryEnsemble ens = build_auxiliary(sys);
  const TrainHistory th = train_hierarchical(sys, ens, zero_gains(sys.partition), cfg);
  double c_max = 0.0;
  for (const auto& s : th.systems) {
    ok = replay_oracle(s, worst) && ok;
    c_max = std::max(c_max, s.contraction);
  }
  for (std::size_t n = 1; n < th.total_gap.size(); ++n) {
    ok = ok && th.total_gap[n] <= std::pow(c_max, double(n)) * th.total_gap[0] + 1e-9;
  }
  return {ok, "all steps monotone and contracting; worst gap_50/gap_0 = " + fmt("%.3g", worst)};
}

// 7
Outcome critic_accuracy() {
  LQRInstance scalar{Mat::Constant(1, 1, 0.2), Mat::Constant(1, 1, 0.5), SymMat::identity(1), SymMat::identity(1),
                     SymMat::identity(1)};
  LQRInstance two;
  two.A = Mat(2, 2);
  two.A << 0.1, 0.1, 0.0, 0.1;
  two.B = Mat(2, 1);
  two.B << 0.3, 0.3;
  two.Q = SymMat::identity(2);
  two.R = SymMat::identity(1);
  two.Phi = SymMat::identity(2);
  bool ok = true;
  std::ostringstream det;
  for (const auto* inst : {&scalar, &two}) {
    const LinearGaussianPolicy pol{Mat::Zero(1, inst->state_dim()), 1.0};
    std::vector<double> means;
    int good = 0;
    for (int T : {1000, 10000, 100000}) {
      GTDConfig cfg;
      cfg.T_inner = T;
      double sum = 0.0;
      for (int seed = 0; seed < 5; ++seed) {
        RngStream rng(seed, 0);
        const double e = *gtd_evaluate(*inst, pol, cfg, rng).delta_err;
        sum += e;
        if (T == 100000) good += e <= 0.1;
      }
      means.push_back(sum / 5);
    }
    const bool mono = means[1] < means[0] && means[2] < means[1];
    ok = ok && good >= 3 && mono;
    det << (inst == &scalar ? "scalar" : "d=2,k=1") << ": " << good << "/5 seeds <= 0.1, mean err "
        << fmt("%.3f", means[0]) << " > " << fmt("%.3f", means[1]) << " > " << fmt("%.3f", means[2]) << "; ";
  }
  std::string d = det.str();
  return {ok, d.substr(0, d.size() - 2)};
}

// 8
Outcome end_to_end() {
  const GlobalLQRSystem sys = generate_system(SubpopulationPartition({2, 3}, {1, 1}, {1, 1}), 1, 0.1);
  const AuxiliaryEnsemble ens = build_auxiliary(sys);
  const LQRInstance glob{sys.A, sys.B, sys.Q, sys.R, global_noise_covariance(sys)};
  int good = 0;
  std::ostringstream det;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig cfg;
    cfg.N_outer = 50;
    cfg.T_inner = 100000;
    cfg.seed = seed;
    cfg.sigma_explore = {1.0};
    const HierarchicalInit init = zero_gains(sys.partition);
    const TrainHistory th = train_hierarchical(sys, ens, init, cfg);
    const double ratio = th.aborted ? INFINITY : th.total_gap.back() / th.total_gap.front();
    const bool stable = !th.aborted && is_stable(glob, final_global_gain(ens, init, th));
    good += ratio <= 0.05 && stable;
    det << (seed ? " " : "") << fmt("%.3f", ratio) << (stable ? "" : "(unstable)");
  }
  return {good >= 3, std::to_string(good) + "/5 seeds reach gap ratio <= 0.05: " + det.str()};
}

// 9
Outcome structural() {
  RngStream rng(1009, 0);
  bool ok = true;
  double off_ulps = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Index n = 1 + t % 6;
    Mat G = rng.normal_matrix(n, n);
    const Mat X = 0.5 * (G + G.transpose());
    const Mat Y = smat(svec(X));
    for (Index i = 0; i < n; ++i) {
      ok = ok && Y(i, i) == X(i, i);
      for (Index j = 0; j < n; ++j)
        if (i != j) off_ulps = std::max(off_ulps, std::abs(Y(i, j) - X(i, j)) / std::abs(X(i, j)) / 0x1p-52);
    }
  }
  double e_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const LQRInstance inst = random_instance(rng, 1 + t % 3, 1 + t % 2, 0.9);
    const LinearGaussianPolicy pol{perturbed_stable_gain(rng, inst, 0.5, 0.95), 0.5};
    const Mat E = recover_natural_gradient(value_vector(inst, pol).delta_star, pol.K);
    e_err = std::max(e_err, (E - analyze_policy(inst, pol).E).cwiseAbs().maxCoeff());
  }
  bool perm = true;
  for (int s = 0; s < 10; ++s) {
    const auto p = random_partition(rng, 3, 6, 3, 2);
    const GlobalLQRSystem sys = generate_system(p, 900 + s, 0.5);
    for (int l = 0; l < p.L(); ++l)
      for (int i = 0; i + 1 < p.sizes[l]; ++i) {
        const AgentPermutation P = agent_transposition(p, l, i, i + 1);
        perm = perm && Mat(P.state * sys.A * P.state.transpose()) == sys.A &&
               Mat(P.state * sys.B * P.action.transpose()) == sys.B &&
               Mat(P.state * sys.Q * P.state.transpose()) == sys.Q.mat() &&
               Mat(P.action * sys.R * P.action.transpose()) == sys.R.mat();
      }
  }
  ok = ok && off_ulps <= 1.0 && e_err <= 1e-10 && perm;
  return {ok, "svec/smat diagonal bitwise, off-diagonal within " + fmt("%.2g", off_ulps) +
                  " ulp; E recovery err " + fmt("%.3g", e_err) + "; permutation invariance " +
                  (perm ? "exact" : "broken")};
}

// 10
Outcome determinism() {
  const GlobalLQRSystem sys = generate_system(SubpopulationPartition({2, 3}, {1, 1}, {1, 1}), 1, 0.1);
  const AuxiliaryEnsemble ens = build_auxiliary(sys);
  TrainConfig cfg;
  cfg.N_outer = 5;
  cfg.T_inner = 5000;
  cfg.seed = 11;
  auto csv = [&] {
    std::ostringstream os;
    write_history_csv(os, train_hierarchical(sys, ens, zero_gains(sys.partition), cfg));
    return os.str();
  };
  const std::string a = csv(), b = csv();
  cfg.seed = 12;
  const std::string c = csv();
  return {a == b && a != c, std::string("identical seeds ") + (a == b ? "byte-identical" : "DIFFER") +
                                ", different seed " + (a != c ? "differs" : "identical")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "decomposition identity", 5, decomposition_identity},
      {2, "pathwise coupling", 5, pathwise},
      {3, "ergodic cost decomposition", 10, ergodic_decomposition},
      {4, "gradient correctness", 10, gradient},
      {5, "gradient domination", 10, domination},
      {6, "oracle natural gradient linear convergence", 30, oracle_convergence},
      {7, "GTD critic accuracy", 180, critic_accuracy},
      {8, "model-free hierarchical training", 600, end_to_end},
      {9, "structural exactness", 2, structural},
      {10, "determinism", 60, determinism},
  };
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] criterion %d %s: %s (%.2fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                in_time ? "" : ", over time budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", int(all.size()) - failed, all.size());
  return failed == 0 ? 0 : 1;
}
