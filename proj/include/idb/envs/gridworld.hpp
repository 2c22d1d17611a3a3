#pragma once

// 1D grid walker: s_{t+1} = s_t + a_t + z_t, r_t = a_t + z_t, with actions and
// inputs in {-1, +1}. Action index 0 is -1, index 1 is +1.

#include <memory>
#include <utility>

#include "idb/core.hpp"

namespace idb::envs {

struct GridWorldState {
  int position = 0;
  double theta = 0.0;  // scalar policy parameter for the closed-form analysis
};

struct GridWorldStepResult {
  GridWorldState next;
  double reward = 0.0;
};

inline GridWorldStepResult gridworld_step(const GridWorldState& state, int action, int input) {
  if ((action != -1 && action != 1) || (input != -1 && input != 1))
    throw Error("gridworld action and input must be -1 or +1");
  GridWorldStepResult r;
  r.next = state;
  r.next.position = state.position + action + input;
  r.reward = static_cast<double>(action + input);
  return r;
}

inline int gridworld_action_value(int action_index) { return action_index == 0 ? -1 : 1; }

struct GridWorldConfig {
  int horizon = 50;
  double position_scale = 0.1;
  bool observe_input = false;  // case 1: observation = (s_t, z_t)
};

class GridWorldEnv final : public Environment {
 public:
  explicit GridWorldEnv(GridWorldConfig config = {}) : config_(config) {}

  std::string name() const override { return "gridworld"; }
  int observation_dim() const override { return config_.observe_input ? 2 : 1; }
  int num_actions() const override { return 2; }

  Observation reset(const InputSequence& inputs) override {
    if (inputs.dim() != 1) throw Error("gridworld inputs are scalar");
    inputs_ = inputs;
    state_ = {};
    t_ = 0;
    return observe();
  }

  StepResult step(int action) override {
    if (action < 0 || action > 1) throw Error("gridworld action index out of range");
    const int z = static_cast<int>(inputs_.scalar(static_cast<std::size_t>(t_)));
    auto r = gridworld_step(state_, gridworld_action_value(action), z);
    state_ = r.next;
    ++t_;
    StepResult out;
    out.reward = r.reward;
    out.done = t_ >= config_.horizon;
    if (!out.done) out.observation = observe();
    return out;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<GridWorldEnv>(*this);
  }

  const GridWorldState& state() const { return state_; }
  int time() const { return t_; }
  const GridWorldConfig& config() const { return config_; }

 private:
  Observation observe() const {
    Observation o;
    o.vector.push_back(state_.position * config_.position_scale);
    if (config_.observe_input) {
      o.vector.push_back(inputs_.scalar(static_cast<std::size_t>(t_)));
      o.includes_input = true;
    }
    return o;
  }

  GridWorldConfig config_;
  InputSequence inputs_;
  GridWorldState state_;
  int t_ = 0;
};

/// Input process for the grid walker. persistence = 0.5 gives i.i.d. uniform
/// +-1 inputs; larger values make z a sticky two-state Markov chain.
inline InputSequence gen_gridworld_inputs(int length, std::uint64_t seed, SequenceId id,
                                          double persistence = 0.5) {
  if (length < 1) throw Error("input length must be >= 1");
  if (!(persistence >= 0.0 && persistence <= 1.0)) throw Error("persistence must be in [0, 1]");
  Rng rng(seed);
  std::vector<double> z(static_cast<std::size_t>(length));
  z[0] = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  for (std::size_t t = 1; t < z.size(); ++t)
    z[t] = uniform01(rng) < persistence ? z[t - 1] : -z[t - 1];
  return InputSequence(id, 1, std::move(z));
}

}  // namespace idb::envs
