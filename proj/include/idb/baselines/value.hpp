#pragma once

// Value-network plumbing shared by every trainable baseline: critic inputs,
// Monte Carlo return targets, and the squared-error value loss
//   L_T[V] = sum_t (V(w_t) - sum_{t'>=t} gamma^{t'-t} r_{t'})^2.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "idb/core.hpp"
#include "idb/nn/mlp.hpp"
#include "idb/nn/optim.hpp"

namespace idb {

/// How rewards become learning targets.
struct ReturnConfig {
  double gamma = 0.995;
  double reward_scale = 1.0;
  // When positive, critics see t * time_scale appended to the observation,
  // followed by sin and cos of 2 pi h t * time_scale for h = 1..time_harmonics.
  double time_scale = 0.0;
  int time_harmonics = 0;
};

inline int critic_input_dim(int obs_dim, const ReturnConfig& cfg) {
  return obs_dim + (cfg.time_scale > 0.0 ? 1 + 2 * cfg.time_harmonics : 0);
}

inline Eigen::MatrixXd critic_inputs(const Trajectory& traj, const ReturnConfig& cfg) {
  Eigen::MatrixXd obs = traj.observation_matrix();
  if (cfg.time_scale <= 0.0) return obs;
  const Eigen::Index d = obs.rows();
  Eigen::MatrixXd x(critic_input_dim(static_cast<int>(d), cfg), obs.cols());
  x.topRows(d) = obs;
  for (Eigen::Index t = 0; t < obs.cols(); ++t) {
    const double u = traj.transitions[static_cast<std::size_t>(t)].t * cfg.time_scale;
    x(d, t) = u;
    for (int h = 1; h <= cfg.time_harmonics; ++h) {
      const double phase = 2.0 * std::numbers::pi * h * u;
      x(d + 2 * h - 1, t) = std::sin(phase);
      x(d + 2 * h, t) = std::cos(phase);
    }
  }
  return x;
}

/// Discounted returns of the scaled rewards.
inline Eigen::VectorXd value_targets(const Trajectory& traj, const ReturnConfig& cfg) {
  std::vector<double> r = traj.rewards();
  for (double& x : r) x *= cfg.reward_scale;
  std::vector<double> g = discounted_returns(r, cfg.gamma);
  return Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
}

struct ValueData {
  Eigen::MatrixXd inputs;   // (critic_dim x n)
  Eigen::VectorXd targets;  // n
  std::size_t size() const { return static_cast<std::size_t>(targets.size()); }
};

inline ValueData make_value_data(std::span<const Trajectory> trajs, const ReturnConfig& cfg) {
  Eigen::Index n = 0;
  for (const auto& t : trajs) n += static_cast<Eigen::Index>(t.size());
  if (n == 0) throw Error("value data needs at least one transition");
  ValueData d;
  Eigen::Index col = 0;
  for (const auto& t : trajs) {
    Eigen::MatrixXd x = critic_inputs(t, cfg);
    if (d.inputs.size() == 0) {
      d.inputs.resize(x.rows(), n);
      d.targets.resize(n);
    }
    d.inputs.middleCols(col, x.cols()) = x;
    d.targets.segment(col, x.cols()) = value_targets(t, cfg);
    col += x.cols();
  }
  return d;
}

inline ValueData make_value_data(const Trajectory& traj, const ReturnConfig& cfg) {
  return make_value_data(std::span<const Trajectory>(&traj, 1), cfg);
}

/// Sum of squared errors.
inline double value_loss(const nn::MlpParams& params, const ValueData& data) {
  nn::MlpCache cache = nn::mlp_forward(params, data.inputs);
  return (cache.output().row(0).transpose() - data.targets).squaredNorm();
}

inline double value_loss(const nn::MlpParams& params, std::span<const Trajectory> trajs,
                         const ReturnConfig& cfg) {
  return value_loss(params, make_value_data(trajs, cfg));
}

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Loss (sum of squared errors) and its gradient.
inline LossGrad value_loss_grad(const nn::MlpParams& params, const ValueData& data) {
  nn::MlpCache cache = nn::mlp_forward(params, data.inputs);
  Eigen::RowVectorXd err = cache.output().row(0) - data.targets.transpose();
  LossGrad out;
  out.loss = err.squaredNorm();
  out.grad = nn::mlp_backward(params, cache, 2.0 * err);
  return out;
}

inline std::vector<double> predict_values(const nn::MlpParams& params, const Trajectory& traj,
                                          const ReturnConfig& cfg) {
  nn::MlpCache cache = nn::mlp_forward(params, critic_inputs(traj, cfg));
  const auto& out = cache.output();
  return std::vector<double>(out.data(), out.data() + out.cols());
}

/// One optimizer step on the mean value loss; returns the mean loss before
/// the step.
inline double fit_value_step(nn::MlpParams& params, nn::AdamState& adam, const ValueData& data) {
  LossGrad lg = value_loss_grad(params, data);
  const double n = static_cast<double>(data.size());
  nn::adam_step(adam, params, lg.grad / n);
  return lg.loss / n;
}

}  // namespace idb
