#pragma once

// Conventional state-dependent value baseline b(w_t) = V(w_t).

#include <span>

#include "idb/baselines/value.hpp"

namespace idb {

/// One optimizer step on the mean value loss over all transitions. Returns
/// the mean loss before the step.
inline double state_value_fit(nn::MlpParams& params, nn::AdamState& adam,
                              std::span<const Trajectory> trajectories, const ReturnConfig& cfg) {
  if (trajectories.empty()) throw Error("no trajectories to fit");
  return fit_value_step(params, adam, make_value_data(trajectories, cfg));
}

class StateValueBaseline {
 public:
  StateValueBaseline() = default;
  StateValueBaseline(const nn::MlpConfig& net, double lr, std::uint64_t seed) {
    Rng rng(seed);
    params_ = nn::MlpParams::glorot(net, rng);
    adam_ = nn::AdamState::for_params(params_, lr);
  }

  const nn::MlpParams& params() const { return params_; }
  void restore(const nn::MlpParams& params) {
    const double lr = adam_.lr;
    params_ = params;
    adam_ = nn::AdamState::for_params(params_, lr);
  }

  double learning_rate() const { return adam_.lr; }
  void set_learning_rate(double lr) { adam_.lr = lr; }

  std::vector<double> values(const Trajectory& traj, const ReturnConfig& cfg) const {
    return predict_values(params_, traj, cfg);
  }

  /// `steps` optimizer steps on the same batch; returns the first loss.
  double fit(std::span<const Trajectory> trajectories, const ReturnConfig& cfg, int steps = 1) {
    if (trajectories.empty()) throw Error("no trajectories to fit");
    ValueData data = make_value_data(trajectories, cfg);
    double first = 0.0;
    for (int s = 0; s < steps; ++s) {
      const double l = fit_value_step(params_, adam_, data);
      if (s == 0) first = l;
    }
    return first;
  }

 private:
  nn::MlpParams params_;
  nn::AdamState adam_;
};

}  // namespace idb
