#pragma once

// Synchronous advantage actor-critic with pluggable baselines.
//
// Each iteration collects num_workers rollouts under a frozen policy
// snapshot, computes Monte Carlo advantages G_t - b_t with the configured
// baseline, takes one Adam step on
//   -mean_t[log pi(a_t|w_t) (G_t - b_t)] - c(iter) mean_t[H(pi(.|w_t))]
// and then updates the baseline. Multi-value and meta baselines group the
// rollouts k at a time on a shared input sequence.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "idb/baselines/model.hpp"
#include "idb/envs/presets.hpp"

namespace idb {

struct TrainConfig {
  double gamma = 0.995;
  int num_workers = 16;
  double lr = 1e-3;
  double value_lr = 1e-3;
  int value_steps = 1;
  double entropy_start = 1.0;
  double entropy_end = 0.001;
  int entropy_horizon = 10000;
  double max_grad_norm = 0.5;  // 0 disables clipping
  double reward_scale = 1.0;
  double time_scale = 0.0;     // critic time feature
  int time_harmonics = 0;      // extra sin/cos time features
  int hidden1 = 64;
  int hidden2 = 32;
  int num_train_sequences = 10;  // N for the multi-value baseline
  std::string sequence_mode = "auto";  // auto | fresh | fixed
  MetaConfig meta;
  std::uint64_t seed = 0;
  int threads = 1;  // execution only; results do not depend on it

  ReturnConfig returns() const { return {gamma, reward_scale, time_scale, time_harmonics}; }

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("gamma must lie in (0, 1]");
    if (num_workers < 1) throw Error("num_workers must be >= 1");
    if (!(lr >= 0.0) || !(value_lr >= 0.0)) throw Error("learning rates must be >= 0");
    if (value_steps < 0) throw Error("value_steps must be >= 0");
    if (entropy_horizon < 1) throw Error("entropy_horizon must be >= 1");
    if (!(entropy_start >= 0.0) || !(entropy_end >= 0.0)) throw Error("entropy coefficients must be >= 0");
    if (!(reward_scale > 0.0)) throw Error("reward_scale must be positive");
    if (time_scale < 0.0) throw Error("time_scale must be >= 0");
    if (time_harmonics < 0) throw Error("time_harmonics must be >= 0");
    if (hidden1 < 1 || hidden2 < 1) throw Error("hidden sizes must be >= 1");
    if (num_train_sequences < 1) throw Error("num_train_sequences must be >= 1");
    if (sequence_mode != "auto" && sequence_mode != "fresh" && sequence_mode != "fixed")
      throw Error("sequence_mode must be auto, fresh or fixed");
    if (meta.inner_steps < 0 || !(meta.inner_lr >= 0.0) || !(meta.outer_lr >= 0.0) || !(meta.inner_clip >= 0.0))
      throw Error("invalid meta-baseline settings");
    if (meta.rollouts_per_sequence < 2 || meta.rollouts_per_sequence % 2 != 0)
      throw Error("rollouts per sequence (k) must be even and >= 2");
    if (threads < 1) throw Error("threads must be >= 1");
  }
};

/// Linear decay from entropy_start to entropy_end over entropy_horizon
/// iterations, constant afterwards.
inline double entropy_coef(const TrainConfig& cfg, long iteration) {
  const double f = std::clamp(static_cast<double>(iteration) / cfg.entropy_horizon, 0.0, 1.0);
  return cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * f;
}

// ---------------------------------------------------------------------------
// Deterministic fan-out

/// Runs f(i) for i in [0, n) on up to `threads` threads. Slot i is written by
/// exactly one call, so results never depend on scheduling. The exception
/// from the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += t) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Gradient estimates

struct GradEstimate {
  Eigen::VectorXd vector;
  int rollout_count = 1;
  long iteration = 0;
};

/// sum_t grad log pi(a_t|w_t) * (G_t - b_t), with G_t the discounted return
/// of the scaled rewards.
inline GradEstimate policy_gradient_estimate(const Trajectory& traj, const nn::MlpParams& policy,
                                             std::span<const double> baseline_values,
                                             const ReturnConfig& cfg) {
  if (baseline_values.size() != traj.size()) throw Error("baseline values do not match trajectory length");
  if (traj.size() == 0) throw Error("empty trajectory");
  const Eigen::VectorXd g = value_targets(traj, cfg);
  nn::MlpCache cache = nn::mlp_forward(policy, traj.observation_matrix());
  Eigen::MatrixXd out_grad(cache.output().rows(), cache.output().cols());
  for (Eigen::Index t = 0; t < out_grad.cols(); ++t) {
    const auto& tr = traj.transitions[static_cast<std::size_t>(t)];
    out_grad.col(t) = nn::softmax_logprob_grad(cache.output().col(t), tr.action).grad *
                      (g[t] - baseline_values[static_cast<std::size_t>(t)]);
  }
  GradEstimate est;
  est.vector = nn::mlp_backward(policy, cache, out_grad);
  if (!est.vector.allFinite()) throw NumericalFailure("non-finite policy gradient");
  return est;
}

/// sum_t grad log pi(a_t|w_t) * b_t: the term a valid baseline adds, zero in
/// expectation.
inline Eigen::VectorXd baseline_term(const Trajectory& traj, const nn::MlpParams& policy,
                                     std::span<const double> baseline_values) {
  if (baseline_values.size() != traj.size()) throw Error("baseline values do not match trajectory length");
  nn::MlpCache cache = nn::mlp_forward(policy, traj.observation_matrix());
  Eigen::MatrixXd out_grad(cache.output().rows(), cache.output().cols());
  for (Eigen::Index t = 0; t < out_grad.cols(); ++t)
    out_grad.col(t) = nn::softmax_logprob_grad(cache.output().col(t), traj.transitions[static_cast<std::size_t>(t)].action).grad *
                      baseline_values[static_cast<std::size_t>(t)];
  return nn::mlp_backward(policy, cache, out_grad);
}

struct VarianceStats {
  double trace_of_covariance = 0.0;
  std::size_t sample_count = 0;
  double mean_vector_norm = 0.0;
};

/// Trace of the unbiased sample covariance, (1/(n-1)) sum_i |g_i - mean|^2.
inline VarianceStats gradient_variance(std::span<const GradEstimate> estimates) {
  if (estimates.size() < 2) throw Error("gradient variance needs at least 2 estimates");
  const Eigen::Index d = estimates.front().vector.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& e : estimates) {
    if (e.vector.size() != d) throw Error("gradient estimates have different dimensions");
    mean += e.vector;
  }
  mean /= static_cast<double>(estimates.size());
  double ss = 0.0;
  for (const auto& e : estimates) ss += (e.vector - mean).squaredNorm();
  VarianceStats s;
  s.sample_count = estimates.size();
  s.trace_of_covariance = ss / static_cast<double>(estimates.size() - 1);
  s.mean_vector_norm = mean.norm();
  return s;
}

// ---------------------------------------------------------------------------
// Rollout plans

struct RolloutPlan {
  std::vector<InputSequence> inputs;  // one per worker
  std::size_t group_size = 1;         // consecutive workers share a sequence
};

inline bool uses_fixed_sequences(const TrainConfig& cfg, BaselineKind kind) {
  if (kind == BaselineKind::multi) return true;
  if (cfg.sequence_mode == "fixed") return true;
  return false;
}

inline std::size_t group_size_for(const TrainConfig& cfg, BaselineKind kind) {
  if (!needs_grouping(kind)) return 1;
  const int k = cfg.meta.rollouts_per_sequence;
  if (cfg.num_workers % k != 0) throw Error("num_workers must be a multiple of k for grouped baselines");
  return static_cast<std::size_t>(k);
}

inline RolloutPlan plan_rollouts(const TrainConfig& cfg, BaselineKind kind, const envs::EnvPreset& preset,
                                 std::span<const InputSequence> train_sequences, long iteration) {
  if (kind == BaselineKind::multi && cfg.sequence_mode == "fresh")
    throw Error("the multi-value baseline trains on its fixed sequence set only");
  RolloutPlan plan;
  plan.group_size = group_size_for(cfg, kind);
  const std::size_t workers = static_cast<std::size_t>(cfg.num_workers);
  const std::size_t groups = workers / plan.group_size;
  const bool fixed = uses_fixed_sequences(cfg, kind);
  if (fixed && train_sequences.empty()) throw Error("no training sequences");
  Rng pick(derive_seed(cfg.seed, {404, static_cast<std::uint64_t>(iteration)}));
  for (std::size_t g = 0; g < groups; ++g) {
    InputSequence seq =
        fixed ? train_sequences[static_cast<std::size_t>(pick() % train_sequences.size())]
              : envs::fresh_inputs(preset, cfg.seed, static_cast<std::uint64_t>(iteration), g, groups);
    for (std::size_t j = 0; j < plan.group_size; ++j) plan.inputs.push_back(seq);
  }
  return plan;
}

/// Worker w of iteration `iteration` rolls out with seed (seed, iteration, w).
inline std::vector<Trajectory> collect_rollouts(const TrainConfig& cfg, const envs::EnvPreset& preset,
                                                const nn::MlpParams& policy, const RolloutPlan& plan,
                                                long iteration) {
  std::vector<Trajectory> out(plan.inputs.size());
  parallel_for(out.size(), cfg.threads, [&](std::size_t w) {
    auto env = preset.make_env();
    out[w] = rollout(policy, *env, plan.inputs[w], preset.max_steps,
                     derive_seed(cfg.seed, {505, static_cast<std::uint64_t>(iteration), w}));
  });
  return out;
}

/// Baseline values for a batch. Grouped kinds expect `group_size`
/// consecutive rollouts per input sequence.
inline std::vector<std::vector<double>> baseline_values(const BaselineModel& model,
                                                        std::span<const Trajectory> batch,
                                                        const ReturnConfig& rc, std::size_t group_size,
                                                        int threads = 1) {
  std::vector<std::vector<double>> values(batch.size());
  if (const auto* m = std::get_if<MetaBaseline>(&model)) {
    if (group_size < 2 || batch.size() % group_size != 0) throw Error("meta baseline needs grouped rollouts");
    const std::size_t groups = batch.size() / group_size;
    parallel_for(groups, threads, [&](std::size_t g) {
      MetaSplit split = m->values(batch.subspan(g * group_size, group_size), rc);
      for (std::size_t j = 0; j < group_size; ++j) values[g * group_size + j] = std::move(split.values[j]);
    });
    return values;
  }
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    values[i] = std::visit(
        [&](const auto& b) -> std::vector<double> {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, NoBaseline> || std::is_same_v<T, OracleBaseline>)
            return b.values(batch[i]);
          else if constexpr (std::is_same_v<T, MetaBaseline>)
            return {};
          else
            return b.values(batch[i], rc);
        },
        model);
  });
  return values;
}

// ---------------------------------------------------------------------------
// One iteration

struct IterationMetrics {
  long iteration = 0;
  double mean_return = 0.0;  // undiscounted, unscaled episode reward
  double entropy_coef = 0.0;
  double policy_entropy = 0.0;  // mean per-step entropy
  double grad_variance_trace = 0.0;
  double grad_norm = 0.0;
  double value_loss = 0.0;
  std::string baseline_kind;
};

inline nlohmann::ordered_json to_json(const IterationMetrics& m) {
  nlohmann::ordered_json j;
  j["iteration"] = m.iteration;
  j["mean_return"] = m.mean_return;
  j["entropy_coef"] = m.entropy_coef;
  j["grad_variance_trace"] = m.grad_variance_trace;
  j["baseline_kind"] = m.baseline_kind;
  j["policy_entropy"] = m.policy_entropy;
  j["grad_norm"] = m.grad_norm;
  j["value_loss"] = m.value_loss;
  return j;
}

namespace detail {

struct TrajectoryGrads {
  Eigen::VectorXd pg;       // sum_t score * advantage
  Eigen::VectorXd entropy;  // sum_t dH/dtheta
  double entropy_sum = 0.0;
};

inline TrajectoryGrads trajectory_grads(const Trajectory& traj, const nn::MlpParams& policy,
                                        std::span<const double> values, const ReturnConfig& rc) {
  const Eigen::VectorXd g = value_targets(traj, rc);
  nn::MlpCache cache = nn::mlp_forward(policy, traj.observation_matrix());
  const auto& logits = cache.output();
  Eigen::MatrixXd pg_out(logits.rows(), logits.cols());
  Eigen::MatrixXd h_out(logits.rows(), logits.cols());
  TrajectoryGrads out;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    if (!logits.col(t).allFinite()) throw NumericalFailure("non-finite logits");
    const auto& tr = traj.transitions[static_cast<std::size_t>(t)];
    pg_out.col(t) = nn::softmax_logprob_grad(logits.col(t), tr.action).grad *
                    (g[t] - values[static_cast<std::size_t>(t)]);
    h_out.col(t) = nn::softmax_entropy_grad(logits.col(t));
    out.entropy_sum += nn::softmax_entropy(logits.col(t));
  }
  out.pg = nn::mlp_backward(policy, cache, pg_out);
  out.entropy = nn::mlp_backward(policy, cache, h_out);
  return out;
}

}  // namespace detail

/// Mutable training state owned by the single updater.
struct TrainerState {
  nn::MlpParams policy;
  nn::AdamState policy_adam;
  BaselineModel baseline;
  std::vector<InputSequence> train_sequences;
  long iteration = 0;
};

inline nn::MlpConfig policy_net_config(const TrainConfig& cfg, const Environment& env) {
  return nn::two_hidden(env.observation_dim(), env.num_actions(), cfg.hidden1, cfg.hidden2);
}

inline nn::MlpConfig value_net_config(const TrainConfig& cfg, const Environment& env) {
  return nn::two_hidden(critic_input_dim(env.observation_dim(), cfg.returns()), 1, cfg.hidden1, cfg.hidden2);
}

inline BaselineModel make_baseline(BaselineKind kind, const TrainConfig& cfg, const Environment& env,
                                   const std::vector<InputSequence>& train_sequences) {
  const nn::MlpConfig net = value_net_config(cfg, env);
  const std::uint64_t seed = derive_seed(cfg.seed, {606});
  switch (kind) {
    case BaselineKind::none: return NoBaseline{};
    case BaselineKind::state: return StateValueBaseline(net, cfg.value_lr, seed);
    case BaselineKind::multi: {
      std::vector<SequenceId> ids;
      for (const auto& s : train_sequences) ids.push_back(s.id());
      return MultiValueBaseline(ids, net, cfg.value_lr, seed);
    }
    case BaselineKind::meta: return MetaBaseline(net, cfg.meta, seed);
    case BaselineKind::oracle: throw Error("oracle baselines are constructed explicitly");
  }
  throw Error("unknown baseline kind");
}

inline TrainerState init_trainer(const TrainConfig& cfg, const envs::EnvPreset& preset, BaselineKind kind) {
  cfg.validate();
  auto env = preset.make_env();
  TrainerState st;
  Rng rng(derive_seed(cfg.seed, {707}));
  st.policy = nn::MlpParams::glorot(policy_net_config(cfg, *env), rng);
  st.policy_adam = nn::AdamState::for_params(st.policy, cfg.lr);
  st.train_sequences = envs::train_set(preset, cfg.seed, static_cast<std::size_t>(cfg.num_train_sequences));
  st.baseline = make_baseline(kind, cfg, *env, st.train_sequences);
  return st;
}

inline const InputSequence& find_sequence(std::span<const InputSequence> seqs, SequenceId id) {
  for (const auto& s : seqs)
    if (s.id() == id) return s;
  throw Error("sequence not in training set");
}

/// Multiplies the optimizer learning rate of a trainable baseline.
inline void scale_baseline_lr(BaselineModel& model, double factor) {
  std::visit(
      [&](auto& b) {
        if constexpr (requires { b.set_learning_rate(1.0); }) b.set_learning_rate(b.learning_rate() * factor);
      },
      model);
}

/// Updates the baseline from a batch. Returns the mean value loss before
/// the update (0 for parameter-free baselines).
inline double update_baseline(BaselineModel& model, std::span<const Trajectory> batch, const TrainConfig& cfg,
                              std::size_t group_size, std::span<const InputSequence> train_sequences) {
  const ReturnConfig rc = cfg.returns();
  if (auto* s = std::get_if<StateValueBaseline>(&model)) return cfg.value_steps > 0 ? s->fit(batch, rc, cfg.value_steps) : 0.0;
  if (auto* mv = std::get_if<MultiValueBaseline>(&model)) {
    double loss = 0.0;
    const std::size_t groups = batch.size() / group_size;
    for (std::size_t g = 0; g < groups; ++g) {
      auto part = batch.subspan(g * group_size, group_size);
      const InputSequence& seq = find_sequence(train_sequences, part.front().input_seq_id);
      if (cfg.value_steps > 0) loss += multivalue_train_step(*mv, seq, part, rc, cfg.value_steps);
    }
    return loss / static_cast<double>(groups);
  }
  if (auto* m = std::get_if<MetaBaseline>(&model)) {
    double loss = 0.0;
    const std::size_t groups = batch.size() / group_size;
    for (std::size_t g = 0; g < groups; ++g) {
      auto part = batch.subspan(g * group_size, group_size);
      loss += m->update(m->values(part, rc), part, rc);
    }
    return loss / static_cast<double>(groups);
  }
  return 0.0;
}

/// One synchronous actor-critic iteration; advances st.iteration.
inline IterationMetrics a2c_iteration(const TrainConfig& cfg, const envs::EnvPreset& preset, TrainerState& st) {
  const BaselineKind kind = kind_of(st.baseline);
  const ReturnConfig rc = cfg.returns();
  const long it = st.iteration;
  RolloutPlan plan = plan_rollouts(cfg, kind, preset, st.train_sequences, it);
  std::vector<Trajectory> batch = collect_rollouts(cfg, preset, st.policy, plan, it);
  auto values = baseline_values(st.baseline, batch, rc, plan.group_size, cfg.threads);

  std::vector<detail::TrajectoryGrads> grads(batch.size());
  parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
    grads[i] = detail::trajectory_grads(batch[i], st.policy, values[i], rc);
  });

  IterationMetrics m;
  m.iteration = it;
  m.baseline_kind = kind_name(kind);
  m.entropy_coef = entropy_coef(cfg, it);
  std::size_t steps = 0;
  Eigen::VectorXd pg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(st.policy.size()));
  Eigen::VectorXd ent = pg;
  std::vector<GradEstimate> estimates;
  double entropy_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {  // reduce in worker order
    steps += batch[i].size();
    pg += grads[i].pg;
    ent += grads[i].entropy;
    entropy_sum += grads[i].entropy_sum;
    m.mean_return += batch[i].total_reward();
    estimates.push_back({grads[i].pg, 1, it});
  }
  m.mean_return /= static_cast<double>(batch.size());
  m.policy_entropy = entropy_sum / static_cast<double>(steps);
  if (estimates.size() >= 2) m.grad_variance_trace = gradient_variance(estimates).trace_of_covariance;

  Eigen::VectorXd loss_grad = -(pg + m.entropy_coef * ent) / static_cast<double>(steps);
  m.grad_norm = nn::clip_grad_norm(loss_grad, cfg.max_grad_norm);
  nn::adam_step(st.policy_adam, st.policy, loss_grad);

  m.value_loss = update_baseline(st.baseline, batch, cfg, plan.group_size, st.train_sequences);
  st.iteration += 1;
  return m;
}

// ---------------------------------------------------------------------------
// Bias instrumentation

struct BiasReport {
  Eigen::VectorXd mean;
  Eigen::VectorXd standard_error;
  std::size_t rollouts = 0;

  /// Largest |mean| / stderr over coordinates with nonzero spread.
  double max_z() const {
    double z = 0.0;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      if (standard_error[i] > 0.0) z = std::max(z, std::abs(mean[i]) / standard_error[i]);
      else if (mean[i] != 0.0) return std::numeric_limits<double>::infinity();
    }
    return z;
  }
};

/// Monte Carlo mean and standard error of sum_t grad log pi * b_t under a
/// frozen policy. Rollouts come in groups of `group_size` sharing an input
/// sequence from `inputs(group)`; the baseline sees a whole group at once.
inline BiasReport bias_estimate(
    const nn::MlpParams& policy, const envs::EnvPreset& preset, std::size_t rollouts, std::size_t group_size,
    const std::function<InputSequence(std::size_t group)>& inputs,
    const std::function<std::vector<std::vector<double>>(std::span<const Trajectory>)>& baseline,
    std::uint64_t seed, int threads = 1) {
  if (group_size < 1 || rollouts % group_size != 0) throw Error("rollouts must be a multiple of group_size");
  const std::size_t groups = rollouts / group_size;
  const Eigen::Index d = static_cast<Eigen::Index>(policy.size());
  // Rollouts sharing a sequence (and a baseline fit) are correlated, so the
  // group average is the independent unit for the standard error.
  std::vector<Eigen::VectorXd> group_mean(groups, Eigen::VectorXd::Zero(d));
  parallel_for(groups, threads, [&](std::size_t g) {
    auto env = preset.make_env();
    InputSequence seq = inputs(g);
    std::vector<Trajectory> part;
    for (std::size_t j = 0; j < group_size; ++j)
      part.push_back(rollout(policy, *env, seq, preset.max_steps, derive_seed(seed, {g, j})));
    auto values = baseline(part);
    for (std::size_t j = 0; j < group_size; ++j) group_mean[g] += baseline_term(part[j], policy, values[j]);
    group_mean[g] /= static_cast<double>(group_size);
  });
  BiasReport r;
  r.rollouts = rollouts;
  r.mean = Eigen::VectorXd::Zero(d);
  for (const auto& g : group_mean) r.mean += g;
  r.mean /= static_cast<double>(groups);
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(d);
  for (const auto& g : group_mean) ss += (g - r.mean).cwiseAbs2();
  const double n = static_cast<double>(groups);
  r.standard_error = groups > 1 ? Eigen::VectorXd((ss / (n - 1.0) / n).cwiseSqrt()) : Eigen::VectorXd::Zero(d);
  return r;
}

}  // namespace idb
