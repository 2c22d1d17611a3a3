#pragma once

// Named verification checks with fixed seeds and tolerances, shared by the
// `check` command and the acceptance runner.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "idb/analysis/checks.hpp"
#include "idb/baselines/oracle.hpp"
#include "idb/envs/presets.hpp"
#include "idb/trainer.hpp"

namespace idb::analysis {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

inline std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <class F>
CheckResult timed(const std::string& name, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = f();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline bool all_passed(const std::vector<CheckResult>& rs) {
  for (const auto& r : rs)
    if (!r.passed) return false;
  return true;
}

// ---------------------------------------------------------------------------

inline CheckResult check_gridworld_gap(double gamma, std::size_t trajectories, std::uint64_t seed, int threads) {
  return timed(fmt("gridworld gap gamma=%g", gamma), [&] {
    VarianceGapReport r = gridworld_variance_gap(gamma, trajectories, 0, seed, threads);
    CheckResult c;
    c.passed = r.z_score() <= 3.0 && r.v2_mc <= r.v1_mc;
    c.detail = fmt("MC gap %.4f +- %.4f vs analytic %.4f (z=%.2f, T=%d, N=%zu, V1=%.4f, V2=%.4f)", r.gap_mc,
                   r.gap_se, r.analytic_gap, r.z_score(), r.horizon, r.trajectories, r.v1_mc, r.v2_mc);
    return c;
  });
}

/// Expected gradient under no / state / input-dependent / optimal baselines
/// on several toy MDPs (both observation cases).
inline CheckResult check_exact_invariance(std::uint64_t seed, double tol = 1e-12) {
  return timed("exact baseline invariance", [&] {
    double worst = 0.0, worst_term = 0.0;
    for (std::uint64_t i = 0; i < 6; ++i) {
      EnumerableMDP m = random_toy_mdp(derive_seed(seed, {i}), 2, 2, 2, 3 + static_cast<int>(i % 2), i % 2 == 1);
      Rng rng(derive_seed(seed, {i, 1}));
      TabularPolicy pol = TabularPolicy::random(m, rng);
      auto paths = enumerate_paths(m, pol);
      VisitTable table = visit_table(m, pol, paths);
      auto in = exact_input_baseline(table);
      auto r = baseline_invariance_check(
          m, pol, {exact_state_baseline(table), in, keyed(optimal_baseline_table(pol, table))});
      worst = std::max(worst, r.max_relative_deviation);
      worst_term = std::max(worst_term, exact_baseline_term(pol, paths, in).norm() / r.reference.norm());
    }
    CheckResult c;
    c.passed = worst < tol && worst_term < tol;
    c.detail = fmt("max relative deviation %.3e, input-baseline term %.3e (tol %.0e)", worst, worst_term, tol);
    return c;
  });
}

inline CheckResult check_optimality(std::uint64_t seed, std::size_t perturbations = 100) {
  return timed("b* optimality", [&] {
    std::size_t trials = 0, violations = 0;
    double opt = 0.0, min_pert = 0.0;
    for (std::uint64_t i = 0; i < 3; ++i) {
      EnumerableMDP m = random_toy_mdp(derive_seed(seed, {i}), 2, 2 + static_cast<int>(i % 2), 2, 3, i == 1);
      Rng rng(derive_seed(seed, {i, 1}));
      TabularPolicy pol = TabularPolicy::random(m, rng);
      auto r = baseline_optimality_check(m, pol, perturbations, derive_seed(seed, {i, 2}));
      trials += r.trials;
      violations += r.violations;
      if (i == 0) opt = r.optimal_variance, min_pert = r.min_perturbed_variance;
    }
    CheckResult c;
    c.passed = violations == 0;
    c.detail = fmt("%zu/%zu perturbations below the optimum (first MDP: var(b*)=%.6g, min perturbed %.6g)",
                   violations, trials, opt, min_pert);
    return c;
  });
}

inline CheckResult check_trpo(std::uint64_t seed, double tol = 1e-10) {
  return timed("surrogate baseline term constancy", [&] {
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 3; ++i) {
      EnumerableMDP m = random_toy_mdp(derive_seed(seed, {i}), 2, 2, 2, 4, i == 2);
      Rng rng(derive_seed(seed, {i, 1}));
      TabularPolicy old = TabularPolicy::random(m, rng);
      VisitTable table = visit_table(m, old);
      std::map<VisitKey, double> b;
      for (const auto& [k, e] : table) b[k] = 3.0 * standard_normal(rng);
      std::vector<Eigen::VectorXd> thetas;
      for (int j = 0; j < 10; ++j) thetas.push_back(TabularPolicy::random(m, rng, 2.0).theta);
      worst = std::max(worst, trpo_term_constancy_check(m, old, keyed(b), thetas).max_relative_deviation);
    }
    CheckResult c;
    c.passed = worst < tol;
    c.detail = fmt("max relative deviation across 10 thetas %.3e (tol %.0e)", worst, tol);
    return c;
  });
}

inline std::vector<CheckResult> check_lemma1(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("factorization, exact", [&] {
    double tv = 0.0;
    for (std::uint64_t i = 0; i < 4; ++i) {
      EnumerableMDP m = random_toy_mdp(derive_seed(seed, {i}), 2, 2, 2, 4, i % 2 == 1);
      Rng rng(derive_seed(seed, {i, 1}));
      TabularPolicy pol = TabularPolicy::random(m, rng);
      for (int t = 0; t < m.horizon; ++t) tv = std::max(tv, lemma1_factorization_exact(m, pol, t).max_tv);
    }
    return CheckResult{"", tv < 1e-12, fmt("max TV %.3e", tv)};
  }));
  out.push_back(timed("factorization, sampled uniform policy", [&] {
    EnumerableMDP m = random_toy_mdp(derive_seed(seed, {10}), 2, 2, 2, 3);
    auto r = lemma1_factorization_sampled(m, TabularPolicy::zeros(m), 1, 50000, derive_seed(seed, {11}));
    return CheckResult{"", r.p_value > 0.01,
                       fmt("chi2 %.2f on %g dof, p=%.3f, max TV %.4f, %zu bins (%zu excluded)", r.chi_square, r.dof,
                           r.p_value, r.max_tv, r.bins_used, r.bins_excluded)};
  }));
  out.push_back(timed("factorization, action-leak negative control", [&] {
    EnumerableMDP m = with_action_leak(random_toy_mdp(derive_seed(seed, {12}), 2, 2, 2, 3));
    auto exact = lemma1_factorization_exact(m, TabularPolicy::zeros(m), 1);
    auto r = lemma1_factorization_sampled(m, TabularPolicy::zeros(m), 1, 50000, derive_seed(seed, {13}));
    return CheckResult{"", r.p_value < 1e-6 && exact.max_tv > 0.05,
                       fmt("rejected: p=%.3g, exact TV %.4f", r.p_value, exact.max_tv)};
  }));
  out.push_back(timed("grid walker Markov test (case 1 passes, case 2 fails)", [&] {
    auto c1 = gridworld_markov_test(true, 200000, derive_seed(seed, {14}));
    auto c2 = gridworld_markov_test(false, 200000, derive_seed(seed, {14}));
    return CheckResult{"", c1.p_value > 0.01 && c2.p_value < 1e-6,
                       fmt("case 1 p=%.3f (%zu contexts), case 2 p=%.3g", c1.p_value, c1.contexts_used, c2.p_value)};
  }));
  return out;
}

inline std::vector<CheckResult> check_numerics(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(timed("gradcheck", [&] {
    const std::vector<std::pair<int, int>> shapes{{1, 2}, {2, 2}, {3, 2}, {11, 10}, {11, 7},
                                                  {1, 1}, {2, 1}, {3, 1}, {4, 1}, {11, 1}, {12, 1}};
    double worst = 0.0;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      worst = std::max(worst, mlp_gradcheck(nn::two_hidden(shapes[i].first, shapes[i].second), 100,
                                            derive_seed(seed, {i})).max_relative_error);
    return CheckResult{"", worst < 1e-4, fmt("max relative error %.3e over 100 cases for each of %zu shapes", worst, shapes.size())};
  }));
  out.push_back(timed("score-function identity", [&] {
    double worst = 0.0;
    for (int A : {2, 3, 7, 10}) worst = std::max(worst, score_identity_residual(A, 1000, derive_seed(seed, {static_cast<std::uint64_t>(A)})));
    return CheckResult{"", worst < 1e-9, fmt("max |sum_a pi grad log pi| %.3e", worst)};
  }));
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo bias of trained baselines

/// Fits `kind` for `fit_iterations` batches under a frozen random linear
/// policy, then estimates E[sum_t score_t b_t] from `rollouts` fresh rollouts
/// (grouped k per sequence for grouped kinds). Passes when every coordinate
/// is within 3 standard errors of zero.
inline CheckResult check_bias_mc(const std::string& preset_name, BaselineKind kind, std::size_t rollouts,
                                 int fit_iterations, std::uint64_t seed, int threads) {
  return timed(fmt("bias %s/%s", preset_name.c_str(), kind_name(kind).c_str()), [&] {
    envs::EnvPreset preset = envs::make_preset(preset_name);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.gamma = 0.995;
    cfg.reward_scale = preset.reward_scale;
    cfg.time_scale = 1.0 / preset.max_steps;
    cfg.num_workers = 16;
    cfg.meta.rollouts_per_sequence = 8;
    auto env = preset.make_env();
    Rng prng(derive_seed(seed, {1}));
    nn::MlpParams policy = nn::MlpParams::glorot(nn::MlpConfig{{env->observation_dim(), env->num_actions()}}, prng);
    auto train = envs::train_set(preset, seed, static_cast<std::size_t>(cfg.num_train_sequences));
    BaselineModel model;
    std::shared_ptr<std::map<SequenceId, InputSequence>> oracle_inputs;
    if (kind == BaselineKind::oracle) {
      oracle_inputs = std::make_shared<std::map<SequenceId, InputSequence>>();
      model = gridworld_input_oracle(oracle_inputs, cfg.returns());
    } else {
      model = make_baseline(kind, cfg, *env, train);
    }
    const std::size_t k = needs_grouping(kind) ? 8 : 1;
    for (int it = 0; it < fit_iterations && kind != BaselineKind::none && kind != BaselineKind::oracle; ++it) {
      RolloutPlan plan;
      plan.group_size = k;
      Rng pick(derive_seed(seed, {2, static_cast<std::uint64_t>(it)}));
      for (std::size_t g = 0; g < 16 / k; ++g) {
        InputSequence s = kind == BaselineKind::multi ? train[pick() % train.size()]
                                                      : envs::fresh_inputs(preset, seed, it, g, 16 / k);
        for (std::size_t j = 0; j < k; ++j) plan.inputs.push_back(s);
      }
      auto batch = collect_rollouts(cfg, preset, policy, plan, it);
      update_baseline(model, batch, cfg, k, train);
    }
    const ReturnConfig rc = cfg.returns();
    auto inputs = [&](std::size_t g) {
      if (kind == BaselineKind::multi) return train[g % train.size()];
      InputSequence s = envs::fresh_inputs(preset, derive_seed(seed, {3}), 0, g, rollouts);
      return s;
    };
    if (oracle_inputs)
      for (std::size_t g = 0; g < rollouts / k; ++g) oracle_inputs->emplace(inputs(g).id(), inputs(g));
    BiasReport r = bias_estimate(
        policy, preset, rollouts, k, inputs,
        [&](std::span<const Trajectory> part) { return baseline_values(model, part, rc, k); },
        derive_seed(seed, {4}), threads);
    CheckResult c;
    c.passed = r.max_z() <= 3.0;
    c.detail = fmt("%zu rollouts, %lld coordinates, max |mean|/se = %.2f", r.rollouts,
                   static_cast<long long>(r.mean.size()), r.max_z());
    return c;
  });
}

}  // namespace idb::analysis
