#pragma once

// Oracle baselines. On enumerable MDPs the variance-optimal input-dependent
// baseline is computed exactly:
//   b*(w, z) = E_a[|score|^2 Q(w, a, z)] / E_a[|score|^2],
// falling back to E_a[Q] when every score vector vanishes (single action).
// For trajectory-based training an oracle is any function of the trajectory
// that may look at its input sequence.

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "idb/analysis/enumerable_mdp.hpp"
#include "idb/baselines/value.hpp"

namespace idb {

inline double optimal_baseline_value(const analysis::TabularPolicy& policy, int obs,
                                     const analysis::VisitEntry& e) {
  double num = 0.0, den = 0.0, mean_q = 0.0;
  for (int a = 0; a < policy.num_actions; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    const double w = policy.score(obs, a).squaredNorm();
    num += e.pi[ua] * w * e.q[ua];
    den += e.pi[ua] * w;
    mean_q += e.pi[ua] * e.q[ua];
  }
  return den > 0.0 ? num / den : mean_q;
}

/// b*(omega, z-tail). The step index is implied by the tail length.
inline double oracle_optimal_baseline(const analysis::EnumerableMDP& mdp,
                                      const analysis::TabularPolicy& policy, int omega,
                                      const std::vector<int>& input_tail) {
  if (input_tail.empty() || static_cast<int>(input_tail.size()) > mdp.horizon)
    throw Error("input tail length must be in [1, horizon]");
  analysis::VisitTable table = analysis::visit_table(mdp, policy);
  analysis::VisitKey key{mdp.horizon - static_cast<int>(input_tail.size()), omega, input_tail};
  auto it = table.find(key);
  if (it == table.end()) throw Error("(omega, input tail) is unreachable");
  return optimal_baseline_value(policy, omega, it->second);
}

/// b* for every reachable key, from a precomputed table.
inline std::map<analysis::VisitKey, double> optimal_baseline_table(const analysis::TabularPolicy& policy,
                                                                   const analysis::VisitTable& table) {
  std::map<analysis::VisitKey, double> out;
  for (const auto& [k, e] : table) out[k] = optimal_baseline_value(policy, k.obs, e);
  return out;
}

inline analysis::KeyedBaseline keyed(std::map<analysis::VisitKey, double> values) {
  auto shared = std::make_shared<const std::map<analysis::VisitKey, double>>(std::move(values));
  return [shared](const analysis::VisitKey& k) {
    auto it = shared->find(k);
    if (it == shared->end()) throw Error("baseline queried at an unreachable key");
    return it->second;
  };
}

/// Trajectory-level oracle: any per-step value function of the rollout.
struct OracleBaseline {
  std::string name = "oracle";
  std::function<std::vector<double>(const Trajectory&)> fn;

  std::vector<double> values(const Trajectory& traj) const {
    std::vector<double> v = fn(traj);
    if (v.size() != traj.size()) throw Error("oracle baseline length mismatch");
    return v;
  }
};

/// Grid walker at theta = 0: E[G_t | z_{t:}] = sum_l gamma^l z_{t+l}, since
/// actions have zero mean. Values are in scaled-reward units.
inline OracleBaseline gridworld_input_oracle(std::shared_ptr<const std::map<SequenceId, InputSequence>> inputs,
                                             const ReturnConfig& cfg) {
  OracleBaseline b;
  b.name = "oracle";
  b.fn = [inputs, cfg](const Trajectory& traj) {
    auto it = inputs->find(traj.input_seq_id);
    if (it == inputs->end()) throw Error("oracle has no input sequence for this trajectory");
    std::vector<double> z(traj.size());
    for (std::size_t t = 0; t < traj.size(); ++t)
      z[t] = cfg.reward_scale * it->second.scalar(static_cast<std::size_t>(traj.transitions[t].t));
    return discounted_returns(z, cfg.gamma);
  };
  return b;
}

struct NoBaseline {
  std::vector<double> values(const Trajectory& traj) const { return std::vector<double>(traj.size(), 0.0); }
};

}  // namespace idb
