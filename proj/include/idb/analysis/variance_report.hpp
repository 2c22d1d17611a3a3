#pragma once

// Paired gradient-variance comparison of baselines under a frozen policy.
//
// Protocol: every baseline kind starts from scratch and is fitted on
// `fit_iterations` batches of num_workers rollouts, k per sequence, with
// `fit_steps` optimizer steps per batch and a learning rate decaying linearly
// to zero. As in training, kinds tied to the fixed training set fit on batches
// drawn from it and the others on fresh sequences; all kinds of a group share
// the same batches. The variance is then measured on
// `eval_batches` shared batches of `rollouts` trajectories, so rows differ only
// in the baseline; the reported trace is the mean over batches.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "idb/baselines/oracle.hpp"
#include "idb/trainer.hpp"

namespace idb::analysis {

struct VarianceProtocol {
  std::size_t rollouts = 64;
  int fit_iterations = 400;
  int fit_steps = 10;
  int eval_batches = 8;
  std::uint64_t seed = 0;
};

struct VarianceRow {
  std::string kind;
  VarianceStats stats;  // trace and mean norm averaged over eval batches
  std::vector<double> batch_traces;
  double final_value_loss = 0.0;
};

inline BaselineModel make_report_baseline(BaselineKind kind, const TrainConfig& cfg, const envs::EnvPreset& preset,
                                          const std::vector<InputSequence>& train) {
  auto env = preset.make_env();
  if (kind != BaselineKind::oracle) return make_baseline(kind, cfg, *env, train);
  if (preset.name != "gridworld" && preset.name != "gridworld-walk")
    throw Error("the oracle baseline is only defined for the grid walker");
  auto map = std::make_shared<std::map<SequenceId, InputSequence>>();
  for (const auto& s : train) map->emplace(s.id(), s);
  return gridworld_input_oracle(map, cfg.returns());
}

inline std::vector<VarianceRow> variance_report(const nn::MlpParams& policy, const envs::EnvPreset& preset,
                                                TrainConfig cfg, const std::vector<BaselineKind>& kinds,
                                                const VarianceProtocol& proto) {
  cfg.validate();
  auto env = preset.make_env();
  if (policy.config().input_dim() != env->observation_dim() || policy.config().output_dim() != env->num_actions())
    throw Error("policy dimensions do not match environment '" + preset.name + "'");
  const std::size_t k = static_cast<std::size_t>(cfg.meta.rollouts_per_sequence);
  if (proto.rollouts < 2 || proto.rollouts % k != 0) throw Error("rollouts must be a multiple of k");
  if (static_cast<std::size_t>(cfg.num_workers) % k != 0) throw Error("num_workers must be a multiple of k");
  if (proto.fit_iterations < 0 || proto.fit_steps < 1 || proto.eval_batches < 1)
    throw Error("variance protocol needs fit_iterations >= 0, fit_steps >= 1, eval_batches >= 1");
  const ReturnConfig rc = cfg.returns();
  auto train = envs::train_set(preset, cfg.seed, static_cast<std::size_t>(cfg.num_train_sequences));

  std::vector<BaselineModel> models;
  for (auto kind : kinds) models.push_back(make_report_baseline(kind, cfg, preset, train));

  auto plan_on_train = [&](std::size_t count, std::uint64_t stream, std::uint64_t it) {
    RolloutPlan plan;
    plan.group_size = k;
    Rng pick(derive_seed(proto.seed, {stream, it}));
    for (std::size_t g = 0; g < count / k; ++g) {
      const InputSequence& s = train[pick() % train.size()];
      for (std::size_t j = 0; j < k; ++j) plan.inputs.push_back(s);
    }
    return plan;
  };

  TrainConfig fit_cfg = cfg;
  fit_cfg.seed = derive_seed(proto.seed, {811});
  fit_cfg.value_steps = proto.fit_steps;
  std::vector<double> last_loss(models.size(), 0.0);
  bool any_fixed = false, any_fresh = false;
  for (auto kind : kinds) (uses_fixed_sequences(cfg, kind) || kind == BaselineKind::oracle ? any_fixed : any_fresh) = true;
  const std::size_t workers = static_cast<std::size_t>(cfg.num_workers);
  const std::uint64_t fresh_seed = derive_seed(proto.seed, {814});
  TrainConfig fresh_cfg = fit_cfg;
  fresh_cfg.seed = derive_seed(proto.seed, {815});
  for (int it = 0; it < proto.fit_iterations; ++it) {
    const auto iu = static_cast<std::uint64_t>(it);
    std::vector<Trajectory> on_train, on_fresh;
    if (any_fixed) on_train = collect_rollouts(fit_cfg, preset, policy, plan_on_train(workers, 810, iu), it);
    if (any_fresh) {
      RolloutPlan plan;
      plan.group_size = k;
      for (std::size_t g = 0; g < workers / k; ++g) {
        InputSequence s = envs::fresh_inputs(preset, fresh_seed, iu, g, workers / k);
        for (std::size_t j = 0; j < k; ++j) plan.inputs.push_back(s);
      }
      on_fresh = collect_rollouts(fresh_cfg, preset, policy, plan, it);
    }
    // linear decay: step `it` runs at (F - it) / F of the base rate
    const double f = static_cast<double>(proto.fit_iterations);
    for (std::size_t m = 0; m < models.size(); ++m) {
      if (it > 0) scale_baseline_lr(models[m], (f - it) / (f - it + 1.0));
      const bool fixed = uses_fixed_sequences(cfg, kinds[m]) || kinds[m] == BaselineKind::oracle;
      last_loss[m] = update_baseline(models[m], fixed ? on_train : on_fresh, fit_cfg, k, train);
    }
  }

  std::vector<VarianceRow> rows(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    rows[m].kind = kind_name(kinds[m]);
    rows[m].final_value_loss = last_loss[m];
  }
  for (int b = 0; b < proto.eval_batches; ++b) {
    const auto bi = static_cast<std::uint64_t>(b);
    TrainConfig eval_cfg = cfg;
    eval_cfg.seed = derive_seed(proto.seed, {813, bi});
    auto eval = collect_rollouts(eval_cfg, preset, policy, plan_on_train(proto.rollouts, 812, bi), 0);
    for (std::size_t m = 0; m < models.size(); ++m) {
      auto values = baseline_values(models[m], eval, rc, k, cfg.threads);
      std::vector<GradEstimate> est(eval.size());
      parallel_for(eval.size(), cfg.threads, [&](std::size_t i) {
        est[i] = policy_gradient_estimate(eval[i], policy, values[i], rc);
      });
      VarianceStats s = gradient_variance(est);
      rows[m].batch_traces.push_back(s.trace_of_covariance);
      rows[m].stats.trace_of_covariance += s.trace_of_covariance / proto.eval_batches;
      rows[m].stats.mean_vector_norm += s.mean_vector_norm / proto.eval_batches;
      rows[m].stats.sample_count += s.sample_count;
    }
  }
  return rows;
}

}  // namespace idb::analysis
