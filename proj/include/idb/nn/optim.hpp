#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "idb/error.hpp"
#include "idb/nn/mlp.hpp"

namespace idb::nn {

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& params, double lr) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    s.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    s.lr = lr;
    return s;
  }
};

inline void require_finite(const Eigen::VectorXd& grad) {
  if (!grad.allFinite()) throw NumericalFailure("non-finite gradient");
}

/// One bias-corrected Adam step descending `grad`.
inline void adam_step(AdamState& state, MlpParams& params, const Eigen::VectorXd& grad) {
  if (static_cast<std::size_t>(grad.size()) != params.size() || state.m.size() != grad.size() ||
      state.v.size() != grad.size())
    throw Error("adam: shape mismatch");
  require_finite(grad);
  state.step_count += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  params.update([&](Eigen::VectorXd& p) {
    p.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
  });
}

/// params <- params - lr * grad
inline void sgd_step(MlpParams& params, const Eigen::VectorXd& grad, double lr) {
  if (static_cast<std::size_t>(grad.size()) != params.size()) throw Error("sgd: shape mismatch");
  require_finite(grad);
  params.update([&](Eigen::VectorXd& p) { p -= lr * grad; });
}

/// Rescales `grad` in place so its norm is at most `max_norm` (no-op if <= 0).
inline double clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

}  // namespace idb::nn
