#pragma once

// Named environment presets: an environment factory, an input generator and
// episode settings. Training, test and fresh sequences come from disjoint id
// ranges and disjoint seed streams.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "idb/envs/abr.hpp"
#include "idb/envs/gridworld.hpp"
#include "idb/envs/load_balance.hpp"

namespace idb::envs {

struct PresetOptions {
  int episode_length = 0;             // 0 keeps the preset default
  std::string reward_mode = "exact";  // load balancing: exact | sampled
  bool observe_input = false;         // grid walker case 1
  double input_persistence = -1.0;    // grid walker; < 0 keeps the preset default
  bool loop_trace = true;             // ABR
};

struct EnvPreset {
  std::string name;
  int max_steps = 0;
  double reward_scale = 1.0;  // brings discounted returns to O(1)-O(10)
  std::function<std::unique_ptr<Environment>()> make_env;
  std::function<InputSequence(std::uint64_t seed, SequenceId id)> make_inputs;
};

inline std::vector<std::string> preset_names() {
  return {"gridworld", "gridworld-walk", "motivating2", "loadbalance10", "abr"};
}

/// Two unit-rate servers at 90% load.
inline LoadBalanceInputParams motivating2_inputs(int jobs) {
  LoadBalanceInputParams p;
  p.num_jobs = jobs;
  p.mean_interarrival = 300.0 / (2.0 * 0.9);
  return p;
}

inline EnvPreset make_preset(const std::string& name, const PresetOptions& opt = {}) {
  EnvPreset p;
  p.name = name;
  auto length = [&](int def) { return opt.episode_length > 0 ? opt.episode_length : def; };
  if (opt.reward_mode != "exact" && opt.reward_mode != "sampled")
    throw Error("reward_mode must be exact or sampled");
  const RewardMode mode = opt.reward_mode == "exact" ? RewardMode::exact : RewardMode::sampled;

  if (name == "gridworld" || name == "gridworld-walk") {
    const int T = length(50);
    const double persistence =
        opt.input_persistence >= 0.0 ? opt.input_persistence : (name == "gridworld" ? 0.5 : 0.9);
    GridWorldConfig gc;
    gc.horizon = T;
    gc.observe_input = opt.observe_input;
    p.max_steps = T;
    p.reward_scale = 0.1;
    p.make_env = [gc] { return std::make_unique<GridWorldEnv>(gc); };
    p.make_inputs = [T, persistence](std::uint64_t seed, SequenceId id) {
      return gen_gridworld_inputs(T, seed, id, persistence);
    };
  } else if (name == "motivating2" || name == "loadbalance10") {
    const int jobs = length(500);
    LoadBalanceConfig lc;
    lc.reward_mode = mode;
    LoadBalanceInputParams ip;
    ip.num_jobs = jobs;
    if (name == "motivating2") {
      lc.server_rates = {1.0, 1.0};
      ip = motivating2_inputs(jobs);
    }
    p.max_steps = jobs;
    p.reward_scale = 1e-5;
    p.make_env = [lc] { return std::make_unique<LoadBalanceEnv>(lc); };
    p.make_inputs = [ip](std::uint64_t seed, SequenceId id) { return gen_loadbalance_inputs(ip, seed, id); };
  } else if (name == "abr") {
    AbrConfig ac;
    ac.num_chunks = length(500);
    ac.loop_trace = opt.loop_trace;
    SyntheticTraceParams tp;
    // enough trace for a full session at the top bitrate when not looping
    tp.num_samples = std::max(3000, static_cast<int>(ac.num_chunks * ac.chunk_duration * 1.5));
    p.max_steps = ac.num_chunks;
    p.reward_scale = 1e-2;
    p.make_env = [ac] { return std::make_unique<AbrEnv>(ac); };
    p.make_inputs = [tp](std::uint64_t seed, SequenceId id) {
      return trace_to_inputs(gen_synthetic_trace(tp, seed), id);
    };
  } else {
    throw Error("unknown environment preset '" + name + "'");
  }
  return p;
}

// Sequence id ranges.
inline constexpr SequenceId kTestIdBase = 1'000'000;
inline constexpr SequenceId kFreshIdBase = 2'000'000;

inline InputSequence train_inputs(const EnvPreset& p, std::uint64_t master_seed, std::size_t i) {
  return p.make_inputs(derive_seed(master_seed, {101, i}), static_cast<SequenceId>(i));
}

inline InputSequence test_inputs(const EnvPreset& p, std::uint64_t master_seed, std::size_t i) {
  return p.make_inputs(derive_seed(master_seed, {202, i}), kTestIdBase + i);
}

/// A never-repeated sequence for slot `slot` of iteration `iteration`.
inline InputSequence fresh_inputs(const EnvPreset& p, std::uint64_t master_seed, std::uint64_t iteration,
                                  std::uint64_t slot, std::uint64_t slots_per_iteration) {
  return p.make_inputs(derive_seed(master_seed, {303, iteration, slot}),
                       kFreshIdBase + iteration * slots_per_iteration + slot);
}

inline std::vector<InputSequence> train_set(const EnvPreset& p, std::uint64_t master_seed, std::size_t n) {
  std::vector<InputSequence> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(train_inputs(p, master_seed, i));
  return v;
}

inline std::vector<InputSequence> test_set(const EnvPreset& p, std::uint64_t master_seed, std::size_t n) {
  std::vector<InputSequence> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(test_inputs(p, master_seed, i));
  return v;
}

}  // namespace idb::envs
