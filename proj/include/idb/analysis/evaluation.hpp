#pragma once

// Policy evaluation on held-out input sequences and the two-server decision
// heatmap.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "idb/envs/presets.hpp"
#include "idb/trainer.hpp"

namespace idb::analysis {

struct EvalReport {
  std::vector<double> per_sequence_mean;
  double mean = 0.0;
  double std = 0.0;  // over all episodes
  std::size_t episodes = 0;
};

using ChooserFactory = std::function<std::function<ActionChoice(const Observation&, Rng&)>()>;

/// Runs `episodes_per_sequence` episodes per sequence with a decision rule.
/// Episode (i, j) uses seed (seed, i, j), so results are reproducible.
inline EvalReport evaluate_with(const envs::EnvPreset& preset, std::span<const InputSequence> sequences,
                                int episodes_per_sequence, std::uint64_t seed, const ChooserFactory& chooser,
                                int threads = 1) {
  if (sequences.empty() || episodes_per_sequence < 1) throw Error("nothing to evaluate");
  const auto E = static_cast<std::size_t>(episodes_per_sequence);
  std::vector<double> totals(sequences.size() * E);
  parallel_for(sequences.size(), threads, [&](std::size_t i) {
    auto env = preset.make_env();
    auto choose = chooser();
    for (std::size_t j = 0; j < E; ++j)
      totals[i * E + j] =
          rollout_with(*env, sequences[i], preset.max_steps, derive_seed(seed, {i, j}), choose).total_reward();
  });
  EvalReport r;
  r.episodes = totals.size();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < E; ++j) s += totals[i * E + j];
    r.per_sequence_mean.push_back(s / static_cast<double>(E));
  }
  for (double t : totals) r.mean += t;
  r.mean /= static_cast<double>(totals.size());
  for (double t : totals) r.std += (t - r.mean) * (t - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(totals.size()));
  return r;
}

inline ChooserFactory sampling_chooser(const nn::MlpParams& policy) {
  return [&policy] {
    return [&policy](const Observation& o, Rng& rng) {
      Eigen::VectorXd logits = nn::mlp_predict(policy, o.vector);
      Eigen::VectorXd p = nn::softmax(logits);
      const int a = sample_categorical(p, rng);
      return ActionChoice{a, logits[a] - nn::logsumexp(logits)};
    };
  };
}

inline ChooserFactory greedy_chooser(const nn::MlpParams& policy) {
  return [&policy] {
    return [&policy](const Observation& o, Rng&) {
      Eigen::VectorXd logits = nn::mlp_predict(policy, o.vector);
      Eigen::Index a = 0;
      logits.maxCoeff(&a);
      return ActionChoice{static_cast<int>(a), logits[a] - nn::logsumexp(logits)};
    };
  };
}

/// Join-shortest-queue on load-balancing observations (j, q_1, ..., q_k).
inline ChooserFactory shortest_queue_chooser() {
  return [] {
    return [](const Observation& o, Rng&) {
      int best = 0;
      for (std::size_t i = 2; i < o.vector.size(); ++i)
        if (o.vector[i] < o.vector[static_cast<std::size_t>(best) + 1]) best = static_cast<int>(i) - 1;
      return ActionChoice{best, 0.0};
    };
  };
}

/// Model predictive control on ABR observations. The session state and the
/// throughput predictor are rebuilt from the observation vector, so the
/// predictor's error window only covers the throughputs still in view.
inline ChooserFactory mpc_chooser(const envs::AbrConfig& cfg, int horizon = 5) {
  return [cfg, horizon] {
    return [cfg, horizon](const Observation& o, Rng&) {
      if (static_cast<int>(o.vector.size()) != 3 + cfg.history) throw Error("mpc needs ABR observations");
      envs::AbrState s;
      const double q = o.vector[0] * cfg.quality(cfg.levels() - 1);
      for (int i = 0; i < cfg.levels(); ++i)
        if (std::abs(cfg.quality(i) - q) < std::abs(cfg.quality(s.last_bitrate_index) - q)) s.last_bitrate_index = i;
      s.buffer = o.vector[1] * 10.0;
      s.chunks_remaining = static_cast<int>(std::lround(o.vector[2] * cfg.num_chunks));
      envs::ThroughputPredictor predictor;
      for (std::size_t i = 3; i < o.vector.size(); ++i)
        if (o.vector[i] > 0.0) predictor.observe(o.vector[i] * 1e6);
      return ActionChoice{envs::mpc_abr_action(s, cfg, predictor, horizon), 0.0};
    };
  };
}

inline EvalReport evaluate_policy(const nn::MlpParams& policy, const envs::EnvPreset& preset,
                                  std::span<const InputSequence> sequences, int episodes_per_sequence,
                                  std::uint64_t seed, bool greedy = false, int threads = 1) {
  return evaluate_with(preset, sequences, episodes_per_sequence, seed,
                       greedy ? greedy_chooser(policy) : sampling_chooser(policy), threads);
}

// ---------------------------------------------------------------------------
// Two-server heatmap

/// Median of the default Pareto job sizes, 100 * 2^(1/1.5).
inline double heatmap_job_size() { return 100.0 * std::pow(2.0, 1.0 / 1.5); }

inline std::vector<double> default_queue_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; ++i) g.push_back(150.0 * i);
  return g;
}

/// H(i, j) = P(action = first server | q_1 = grid[i], q_2 = grid[j]).
inline Eigen::MatrixXd policy_heatmap(const nn::MlpParams& policy, const std::vector<double>& grid,
                                      double job_size = heatmap_job_size(), double obs_scale = 1e-3) {
  if (policy.config().input_dim() != 3 || policy.config().output_dim() != 2)
    throw Error("heatmap needs a two-server load-balancing policy");
  const auto n = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      Observation o = envs::LoadBalanceEnv::make_observation(
          job_size, {grid[static_cast<std::size_t>(i)], grid[static_cast<std::size_t>(j)]}, obs_scale);
      h(i, j) = nn::softmax(nn::mlp_predict(policy, o.vector))[0];
    }
  return h;
}

struct HeatmapAgreement {
  double fraction = 0.0;
  std::size_t points = 0;
};

/// Fraction of grid points with |q1 - q2| >= min_gap * max(q1, q2) where the
/// policy's preferred server is the shorter queue.
inline HeatmapAgreement shortest_queue_agreement(const Eigen::MatrixXd& heat, const std::vector<double>& grid,
                                                 double min_gap = 0.2) {
  HeatmapAgreement a;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const double q1 = grid[i], q2 = grid[j];
      const double hi = std::max(q1, q2);
      if (hi <= 0.0 || std::abs(q1 - q2) < min_gap * hi) continue;
      ++a.points;
      const bool prefers_first = heat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.5;
      if (prefers_first == (q1 < q2)) ++agree;
    }
  if (a.points > 0) a.fraction = static_cast<double>(agree) / static_cast<double>(a.points);
  return a;
}

}  // namespace idb::analysis
