#pragma once

// Meta-learned value network. For each input sequence, k rollouts are split
// in half; a copy of the meta network is adapted with a few SGD steps on one
// half and predicts values for the other, so no rollout's baseline depends on
// its own rewards. The meta update is first order: held-out loss gradients
// taken at the adapted parameters are applied to the meta parameters.

#include <span>
#include <vector>

#include "idb/baselines/value.hpp"

namespace idb {

struct MetaConfig {
  double inner_lr = 1e-4;
  int inner_steps = 5;
  double outer_lr = 1e-3;
  int rollouts_per_sequence = 8;  // k
  // Inner-step gradient norm cap (0 disables). Heavy-tailed observations can
  // otherwise make a fixed-size SGD step diverge.
  double inner_clip = 1000.0;
};

inline void require_single_sequence(std::span<const Trajectory> rollouts) {
  if (rollouts.empty()) throw Error("no rollouts to adapt on");
  for (const auto& t : rollouts)
    if (t.input_seq_id != rollouts.front().input_seq_id)
      throw Error("adaptation rollouts come from mixed input sequences");
}

/// `inner_steps` SGD steps on the mean value loss over all transitions of
/// `rollouts`, each gradient capped at norm `max_grad_norm` when positive.
inline nn::MlpParams meta_adapt(const nn::MlpParams& meta, std::span<const Trajectory> rollouts,
                                const ReturnConfig& cfg, double inner_lr, int inner_steps,
                                double max_grad_norm = 0.0) {
  require_single_sequence(rollouts);
  if (inner_steps < 0) throw Error("inner_steps must be >= 0");
  nn::MlpParams adapted = meta;
  if (inner_lr == 0.0 || inner_steps == 0) return adapted;
  ValueData data = make_value_data(rollouts, cfg);
  const double n = static_cast<double>(data.size());
  for (int s = 0; s < inner_steps; ++s) {
    Eigen::VectorXd g = value_loss_grad(adapted, data).grad / n;
    nn::clip_grad_norm(g, max_grad_norm);
    nn::sgd_step(adapted, g, inner_lr);
  }
  return adapted;
}

struct MetaSplit {
  std::size_t half = 0;
  nn::MlpParams adapted_on_first;   // predicts the second half
  nn::MlpParams adapted_on_second;  // predicts the first half
  std::vector<std::vector<double>> values;  // per rollout, per step
};

inline MetaSplit meta_baseline_values(const nn::MlpParams& meta, std::span<const Trajectory> rollouts,
                                      const ReturnConfig& cfg, double inner_lr, int inner_steps,
                                      double max_grad_norm = 0.0) {
  const std::size_t k = rollouts.size();
  if (k < 2 || k % 2 != 0) throw Error("meta baseline needs an even number (>= 2) of rollouts");
  require_single_sequence(rollouts);
  MetaSplit out;
  out.half = k / 2;
  auto first = rollouts.subspan(0, out.half);
  auto second = rollouts.subspan(out.half);
  out.adapted_on_first = meta_adapt(meta, first, cfg, inner_lr, inner_steps, max_grad_norm);
  out.adapted_on_second = meta_adapt(meta, second, cfg, inner_lr, inner_steps, max_grad_norm);
  out.values.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& net = i < out.half ? out.adapted_on_second : out.adapted_on_first;
    out.values[i] = predict_values(net, rollouts[i], cfg);
  }
  return out;
}

/// First-order outer step. Returns the mean held-out loss before the step.
inline double meta_outer_update(nn::MlpParams& meta, nn::AdamState& adam, const MetaSplit& split,
                                std::span<const Trajectory> rollouts, const ReturnConfig& cfg) {
  if (split.adapted_on_first.config().layer_sizes != meta.config().layer_sizes ||
      split.adapted_on_second.config().layer_sizes != meta.config().layer_sizes)
    throw Error("meta update: shape mismatch");
  if (rollouts.size() != 2 * split.half) throw Error("meta update: rollout count mismatch");
  ValueData first = make_value_data(rollouts.subspan(0, split.half), cfg);
  ValueData second = make_value_data(rollouts.subspan(split.half), cfg);
  LossGrad a = value_loss_grad(split.adapted_on_first, second);
  LossGrad b = value_loss_grad(split.adapted_on_second, first);
  const double n = static_cast<double>(first.size() + second.size());
  nn::adam_step(adam, meta, (a.grad + b.grad) / n);
  return (a.loss + b.loss) / n;
}

class MetaBaseline {
 public:
  MetaBaseline() = default;
  MetaBaseline(const nn::MlpConfig& net, MetaConfig config, std::uint64_t seed) : config_(config) {
    Rng rng(seed);
    meta_ = nn::MlpParams::glorot(net, rng);
    adam_ = nn::AdamState::for_params(meta_, config_.outer_lr);
  }

  const MetaConfig& config() const { return config_; }
  const nn::MlpParams& params() const { return meta_; }
  void restore(const nn::MlpParams& params) {
    meta_ = params;
    adam_ = nn::AdamState::for_params(meta_, config_.outer_lr);
  }

  double learning_rate() const { return adam_.lr; }
  void set_learning_rate(double lr) { adam_.lr = lr; }

  MetaSplit values(std::span<const Trajectory> rollouts, const ReturnConfig& cfg) const {
    return meta_baseline_values(meta_, rollouts, cfg, config_.inner_lr, config_.inner_steps, config_.inner_clip);
  }

  double update(const MetaSplit& split, std::span<const Trajectory> rollouts, const ReturnConfig& cfg) {
    return meta_outer_update(meta_, adam_, split, rollouts, cfg);
  }

 private:
  MetaConfig config_;
  nn::MlpParams meta_;
  nn::AdamState adam_;
};

}  // namespace idb
