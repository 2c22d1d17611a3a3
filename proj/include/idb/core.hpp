#pragma once

// Input-driven MDP abstraction: exogenous input sequences, the environment
// step contract, trajectories, and discounted returns.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "idb/error.hpp"
#include "idb/nn/mlp.hpp"
#include "idb/nn/softmax.hpp"
#include "idb/random.hpp"

namespace idb {

using SequenceId = std::uint64_t;

/// One realization z_0 ... z_{T-1} of the exogenous input process. Values are
/// stored flat, `dim` reals per step.
class InputSequence {
 public:
  InputSequence() = default;
  InputSequence(SequenceId id, int dim, std::vector<double> flat)
      : id_(id), dim_(dim), flat_(std::move(flat)) {
    validate();
  }

  static InputSequence from_rows(SequenceId id, const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error("input sequence must have at least one value");
    std::vector<double> flat;
    const int dim = static_cast<int>(rows.front().size());
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != dim) throw Error("input values have inconsistent dimension");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return {id, dim, std::move(flat)};
  }

  SequenceId id() const { return id_; }
  int dim() const { return dim_; }
  std::size_t length() const { return dim_ > 0 ? flat_.size() / static_cast<std::size_t>(dim_) : 0; }
  std::span<const double> at(std::size_t t) const {
    if (t >= length()) throw Error("input exhausted");
    return {flat_.data() + t * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  double scalar(std::size_t t) const { return at(t)[0]; }
  const std::vector<double>& flat() const { return flat_; }

  void validate() const {
    if (dim_ < 1) throw Error("input dimension must be >= 1");
    if (flat_.empty()) throw Error("input sequence must have at least one value");
    if (flat_.size() % static_cast<std::size_t>(dim_) != 0)
      throw Error("input values have inconsistent dimension");
  }

  bool operator==(const InputSequence&) const = default;

 private:
  SequenceId id_ = 0;
  int dim_ = 0;
  std::vector<double> flat_;
};

struct Observation {
  std::vector<double> vector;
  bool includes_input = false;  // true when the current input is the trailing entries
};

struct Transition {
  Observation observation;
  int action = 0;
  double log_prob = 0.0;
  double reward = 0.0;
  int t = 0;  // step index; also the start of the input tail z_{t:}
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  SequenceId input_seq_id = 0;
  int total_steps = 0;

  std::size_t size() const { return transitions.size(); }
  std::vector<double> rewards() const {
    std::vector<double> r;
    r.reserve(transitions.size());
    for (const auto& tr : transitions) r.push_back(tr.reward);
    return r;
  }
  double total_reward() const {
    double s = 0.0;
    for (const auto& tr : transitions) s += tr.reward;
    return s;
  }
  /// Observations as columns, (obs_dim x T).
  Eigen::MatrixXd observation_matrix() const {
    if (transitions.empty()) return {};
    const auto dim = static_cast<Eigen::Index>(transitions.front().observation.vector.size());
    Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(transitions.size()));
    for (std::size_t t = 0; t < transitions.size(); ++t)
      m.col(static_cast<Eigen::Index>(t)) =
          Eigen::Map<const Eigen::VectorXd>(transitions[t].observation.vector.data(), dim);
    return m;
  }
};

struct StepResult {
  Observation observation;  // observation for the next decision
  double reward = 0.0;
  bool done = false;
};

/// Input-driven environment. An environment instance is single-owner; `reset`
/// installs an input sequence which is then consumed by `step`.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual int observation_dim() const = 0;
  virtual int num_actions() const = 0;
  virtual Observation reset(const InputSequence& inputs) = 0;
  virtual StepResult step(int action) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

/// output[t] = rewards[t] + gamma * output[t+1], computed backward.
inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    if (!std::isfinite(rewards[i])) throw NumericalFailure("non-finite reward");
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

/// Inverse-CDF draw from a discrete distribution.
inline int sample_categorical(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng) {
  const double u = uniform01(rng);
  double c = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    c += probs[i];
    if (u < c) return static_cast<int>(i);
  }
  for (Eigen::Index i = probs.size(); i-- > 0;)
    if (probs[i] > 0.0) return static_cast<int>(i);
  return 0;
}

/// A decision rule used for a rollout: returns (action, log-probability).
struct ActionChoice {
  int action = 0;
  double log_prob = 0.0;
};

/// Runs one episode with an arbitrary decision rule
/// `choose(const Observation&, Rng&) -> ActionChoice`.
template <class Chooser>
Trajectory rollout_with(Environment& env, const InputSequence& inputs, int max_steps,
                        std::uint64_t rng_seed, Chooser&& choose) {
  if (max_steps < 1) throw Error("max_steps must be >= 1");
  Rng rng(rng_seed);
  Trajectory traj;
  traj.input_seq_id = inputs.id();
  Observation obs = env.reset(inputs);
  for (int t = 0; t < max_steps; ++t) {
    ActionChoice c = choose(obs, rng);
    StepResult r = env.step(c.action);
    Transition tr;
    tr.observation = std::move(obs);
    tr.action = c.action;
    tr.log_prob = c.log_prob;
    tr.reward = r.reward;
    tr.t = t;
    tr.done = r.done || t + 1 == max_steps;
    traj.transitions.push_back(std::move(tr));
    obs = std::move(r.observation);
    if (r.done) break;
  }
  traj.total_steps = static_cast<int>(traj.transitions.size());
  return traj;
}

/// Samples actions from softmax(policy(observation)).
inline Trajectory rollout(const nn::MlpParams& policy, Environment& env,
                          const InputSequence& inputs, int max_steps, std::uint64_t rng_seed) {
  if (policy.config().input_dim() != env.observation_dim() ||
      policy.config().output_dim() != env.num_actions())
    throw Error("policy shape does not match environment");
  return rollout_with(env, inputs, max_steps, rng_seed, [&](const Observation& o, Rng& rng) {
    Eigen::VectorXd logits = nn::mlp_predict(policy, o.vector);
    if (!logits.allFinite()) throw NumericalFailure("non-finite logits");
    Eigen::VectorXd p = nn::softmax(logits);
    const int a = sample_categorical(p, rng);
    return ActionChoice{a, logits[a] - nn::logsumexp(logits)};
  });
}

/// Picks argmax of the policy logits (lowest index on ties).
inline Trajectory rollout_greedy(const nn::MlpParams& policy, Environment& env,
                                 const InputSequence& inputs, int max_steps) {
  return rollout_with(env, inputs, max_steps, 0, [&](const Observation& o, Rng&) {
    Eigen::VectorXd logits = nn::mlp_predict(policy, o.vector);
    if (!logits.allFinite()) throw NumericalFailure("non-finite logits");
    Eigen::Index a = 0;
    logits.maxCoeff(&a);
    return ActionChoice{static_cast<int>(a), logits[a] - nn::logsumexp(logits)};
  });
}

// Trajectory dump: one JSON object per line, fields in this order:
//   step, observation, action, log_prob, reward, done
// preceded by a header line {"input_seq_id": ..., "total_steps": ...}.
inline void write_trajectory(std::ostream& os, const Trajectory& traj) {
  nlohmann::ordered_json header;
  header["input_seq_id"] = traj.input_seq_id;
  header["total_steps"] = traj.total_steps;
  os << header.dump() << '\n';
  for (const auto& tr : traj.transitions) {
    nlohmann::ordered_json j;
    j["step"] = tr.t;
    j["observation"] = tr.observation.vector;
    j["action"] = tr.action;
    j["log_prob"] = tr.log_prob;
    j["reward"] = tr.reward;
    j["done"] = tr.done;
    os << j.dump() << '\n';
  }
}

inline Trajectory read_trajectory(std::istream& is) {
  Trajectory traj;
  std::string line;
  if (!std::getline(is, line)) throw Error("empty trajectory dump");
  auto header = nlohmann::json::parse(line);
  traj.input_seq_id = header.at("input_seq_id").get<SequenceId>();
  traj.total_steps = header.at("total_steps").get<int>();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Transition tr;
    tr.t = j.at("step").get<int>();
    tr.observation.vector = j.at("observation").get<std::vector<double>>();
    tr.action = j.at("action").get<int>();
    tr.log_prob = j.at("log_prob").get<double>();
    tr.reward = j.at("reward").get<double>();
    tr.done = j.at("done").get<bool>();
    traj.transitions.push_back(std::move(tr));
  }
  if (static_cast<int>(traj.transitions.size()) != traj.total_steps)
    throw Error("trajectory dump step count mismatch");
  return traj;
}

}  // namespace idb
