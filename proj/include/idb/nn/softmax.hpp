#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>

#include "idb/error.hpp"

namespace idb::nn {

inline double logsumexp(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

inline Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  if (!logits.allFinite()) throw NumericalFailure("non-finite logits");
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

struct LogProbGrad {
  double log_prob = 0.0;
  Eigen::VectorXd grad;  // d log_prob / d logits = onehot(a) - softmax
};

inline LogProbGrad softmax_logprob_grad(const Eigen::Ref<const Eigen::VectorXd>& logits,
                                        int action) {
  if (action < 0 || action >= logits.size()) throw Error("action index out of range");
  LogProbGrad out;
  Eigen::VectorXd p = softmax(logits);
  out.log_prob = logits[action] - logsumexp(logits);
  out.grad = -p;
  out.grad[action] += 1.0;
  return out;
}

/// Entropy H = -sum p log p of softmax(logits).
inline double softmax_entropy(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double lse = logsumexp(logits);
  double h = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double lp = logits[i] - lse;
    h -= std::exp(lp) * lp;
  }
  return h;
}

/// dH/dlogits_i = -p_i (log p_i + H).
inline Eigen::VectorXd softmax_entropy_grad(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double lse = logsumexp(logits);
  const double h = softmax_entropy(logits);
  Eigen::VectorXd g(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double lp = logits[i] - lse;
    g[i] = -std::exp(lp) * (lp + h);
  }
  return g;
}

}  // namespace idb::nn
