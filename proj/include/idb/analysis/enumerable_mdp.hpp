#pragma once

// Small input-driven MDPs given by explicit tables, with exhaustive path
// enumeration. Everything downstream (Q values, visitation, expected
// gradients and their variances) is computed exactly from the path list.

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "idb/error.hpp"
#include "idb/nn/softmax.hpp"
#include "idb/random.hpp"

namespace idb::analysis {

using Dist = std::vector<double>;

struct EnumerableMDP {
  int num_states = 0;
  int num_actions = 0;
  int num_inputs = 0;
  int horizon = 0;  // T <= 6
  double gamma = 1.0;
  bool observe_input = false;  // omega = (s, z) when true, s otherwise

  Dist initial_state;                             // [s]
  Dist initial_input;                             // [z]
  std::vector<std::vector<std::vector<Dist>>> transition;  // [s][a][z] -> dist over s'
  std::vector<Dist> input_kernel;                 // [z] -> dist over z'
  std::vector<std::vector<std::vector<double>>> reward;    // [s][a][z]

  // Negative control only: when non-empty, z' ~ leak_kernel[z][a], so actions
  // feed the input process and the model is no longer input-driven.
  std::vector<std::vector<Dist>> leak_kernel;

  int num_observations() const { return observe_input ? num_states * num_inputs : num_states; }
  int observation_index(int s, int z) const { return observe_input ? s * num_inputs + z : s; }
  const Dist& next_input(int z, int a) const {
    return leak_kernel.empty() ? input_kernel[z] : leak_kernel[z][a];
  }

  void validate() const;
};

namespace detail {
inline void check_dist(const Dist& d, std::size_t n, const char* what) {
  if (d.size() != n) throw Error(std::string(what) + ": wrong support size");
  double s = 0.0;
  for (double p : d) {
    if (!(p >= 0.0)) throw Error(std::string(what) + ": negative probability");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12) throw Error(std::string(what) + ": not row-stochastic");
}
}  // namespace detail

inline void EnumerableMDP::validate() const {
  if (num_states < 1 || num_actions < 1 || num_inputs < 1) throw Error("empty MDP tables");
  if (horizon < 1 || horizon > 6) throw Error("horizon must be in [1, 6]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  const auto S = static_cast<std::size_t>(num_states);
  const auto A = static_cast<std::size_t>(num_actions);
  const auto Z = static_cast<std::size_t>(num_inputs);
  detail::check_dist(initial_state, S, "initial state");
  detail::check_dist(initial_input, Z, "initial input");
  if (transition.size() != S || reward.size() != S || input_kernel.size() != Z)
    throw Error("MDP table shape mismatch");
  for (std::size_t s = 0; s < S; ++s) {
    if (transition[s].size() != A || reward[s].size() != A) throw Error("MDP table shape mismatch");
    for (std::size_t a = 0; a < A; ++a) {
      if (transition[s][a].size() != Z || reward[s][a].size() != Z) throw Error("MDP table shape mismatch");
      for (std::size_t z = 0; z < Z; ++z) detail::check_dist(transition[s][a][z], S, "state kernel");
    }
  }
  for (const auto& d : input_kernel) detail::check_dist(d, Z, "input kernel");
  if (!leak_kernel.empty()) {
    if (leak_kernel.size() != Z) throw Error("leak kernel shape mismatch");
    for (const auto& row : leak_kernel) {
      if (row.size() != A) throw Error("leak kernel shape mismatch");
      for (const auto& d : row) detail::check_dist(d, Z, "leak kernel");
    }
  }
}

namespace detail {
inline Dist random_dist(std::size_t n, Rng& rng) {
  Dist d(n);
  double s = 0.0;
  for (auto& p : d) s += (p = 0.2 + uniform01(rng));
  for (auto& p : d) p /= s;
  return d;
}
}  // namespace detail

/// Random toy instance with dense positive kernels.
inline EnumerableMDP random_toy_mdp(std::uint64_t seed, int states = 2, int actions = 2, int inputs = 2,
                                    int horizon = 3, bool observe_input = false, double gamma = 0.9) {
  Rng rng(seed);
  EnumerableMDP m;
  m.num_states = states;
  m.num_actions = actions;
  m.num_inputs = inputs;
  m.horizon = horizon;
  m.gamma = gamma;
  m.observe_input = observe_input;
  const auto S = static_cast<std::size_t>(states);
  const auto A = static_cast<std::size_t>(actions);
  const auto Z = static_cast<std::size_t>(inputs);
  m.initial_state = detail::random_dist(S, rng);
  m.initial_input = detail::random_dist(Z, rng);
  m.transition.assign(S, std::vector<std::vector<Dist>>(A, std::vector<Dist>(Z)));
  m.reward.assign(S, std::vector<std::vector<double>>(A, std::vector<double>(Z)));
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t z = 0; z < Z; ++z) {
        m.transition[s][a][z] = detail::random_dist(S, rng);
        m.reward[s][a][z] = 4.0 * uniform01(rng) - 2.0;
      }
  for (std::size_t z = 0; z < Z; ++z) m.input_kernel.push_back(detail::random_dist(Z, rng));
  m.validate();
  return m;
}

/// Copies `m` and makes z_{t+1} strongly depend on a_t.
inline EnumerableMDP with_action_leak(EnumerableMDP m, double strength = 0.9) {
  const auto Z = static_cast<std::size_t>(m.num_inputs);
  m.leak_kernel.assign(Z, std::vector<Dist>(static_cast<std::size_t>(m.num_actions)));
  for (std::size_t z = 0; z < Z; ++z)
    for (std::size_t a = 0; a < m.leak_kernel[z].size(); ++a) {
      Dist d(Z, (1.0 - strength) / static_cast<double>(Z));
      d[a % Z] += strength;
      m.leak_kernel[z][a] = d;
    }
  m.validate();
  return m;
}

/// Softmax policy with one logit per (observation, action). Parameters are
/// laid out observation-major: theta[obs * A + a].
struct TabularPolicy {
  int num_observations = 0;
  int num_actions = 0;
  Eigen::VectorXd theta;

  static TabularPolicy zeros(const EnumerableMDP& m) {
    return {m.num_observations(), m.num_actions,
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.num_observations()) * m.num_actions)};
  }
  static TabularPolicy random(const EnumerableMDP& m, Rng& rng, double scale = 1.0) {
    TabularPolicy p = zeros(m);
    for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] = scale * standard_normal(rng);
    return p;
  }

  Eigen::Index dim() const { return theta.size(); }
  Eigen::VectorXd logits(int obs) const { return theta.segment(static_cast<Eigen::Index>(obs) * num_actions, num_actions); }
  Eigen::VectorXd probs(int obs) const { return nn::softmax(logits(obs)); }

  /// Full score vector d log pi(a | obs) / d theta.
  Eigen::VectorXd score(int obs, int a) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
    g.segment(static_cast<Eigen::Index>(obs) * num_actions, num_actions) =
        nn::softmax_logprob_grad(logits(obs), a).grad;
    return g;
  }
};

struct PathStep {
  int state = 0;
  int input = 0;
  int obs = 0;
  int action = 0;
  double reward = 0.0;
  double ret = 0.0;  // discounted return from this step
};

struct Path {
  double prob = 0.0;
  std::vector<PathStep> steps;
  std::vector<int> inputs() const {
    std::vector<int> z;
    for (const auto& s : steps) z.push_back(s.input);
    return z;
  }
};

/// (t, omega_t, z_{t:T-1}): the argument of an input-dependent baseline.
struct VisitKey {
  int t = 0;
  int obs = 0;
  std::vector<int> tail;
  auto operator<=>(const VisitKey&) const = default;
};

inline VisitKey visit_key(const Path& p, std::size_t t) {
  VisitKey k;
  k.t = static_cast<int>(t);
  k.obs = p.steps[t].obs;
  for (std::size_t u = t; u < p.steps.size(); ++u) k.tail.push_back(p.steps[u].input);
  return k;
}

inline constexpr std::size_t kDefaultPathBound = 1u << 20;

/// Every positive-probability path of length T under `policy`.
inline std::vector<Path> enumerate_paths(const EnumerableMDP& m, const TabularPolicy& policy,
                                         std::size_t max_paths = kDefaultPathBound) {
  m.validate();
  if (policy.num_observations != m.num_observations() || policy.num_actions != m.num_actions)
    throw Error("policy shape does not match MDP");
  double bound = static_cast<double>(m.num_states) * m.num_inputs;
  for (int t = 0; t < m.horizon; ++t)
    bound *= static_cast<double>(m.num_actions) * (t + 1 < m.horizon ? m.num_states * m.num_inputs : 1);
  if (bound > static_cast<double>(max_paths)) throw Error("enumeration bound exceeded");

  std::vector<Path> out;
  Path cur;
  cur.steps.resize(static_cast<std::size_t>(m.horizon));
  std::function<void(int, int, int, double)> rec = [&](int t, int s, int z, double p) {
    const int obs = m.observation_index(s, z);
    Eigen::VectorXd pi = policy.probs(obs);
    for (int a = 0; a < m.num_actions; ++a) {
      const double pa = p * pi[a];
      if (pa == 0.0) continue;
      PathStep& st = cur.steps[static_cast<std::size_t>(t)];
      st = {s, z, obs, a, m.reward[s][a][z], 0.0};
      if (t + 1 == m.horizon) {
        cur.prob = pa;
        double g = 0.0;
        for (std::size_t u = cur.steps.size(); u-- > 0;) cur.steps[u].ret = g = cur.steps[u].reward + m.gamma * g;
        out.push_back(cur);
        continue;
      }
      const Dist& ps = m.transition[s][a][z];
      const Dist& pz = m.next_input(z, a);
      for (int s2 = 0; s2 < m.num_states; ++s2)
        for (int z2 = 0; z2 < m.num_inputs; ++z2) {
          const double q = pa * ps[s2] * pz[z2];
          if (q > 0.0) rec(t + 1, s2, z2, q);
        }
    }
  };
  for (int s = 0; s < m.num_states; ++s)
    for (int z = 0; z < m.num_inputs; ++z) {
      const double p = m.initial_state[s] * m.initial_input[z];
      if (p > 0.0) rec(0, s, z, p);
    }
  return out;
}

/// Per-key visitation mass and Q(omega, a, z-tail).
struct VisitEntry {
  double mass = 0.0;                // sum over t of P(key at step t)
  std::vector<double> action_mass;  // mass split by action
  std::vector<double> q;            // E[G_t | key, a]
  std::vector<double> pi;           // policy probabilities at omega
};

using VisitTable = std::map<VisitKey, VisitEntry>;

inline VisitTable visit_table(const EnumerableMDP& m, const TabularPolicy& policy,
                              const std::vector<Path>& paths) {
  VisitTable table;
  const auto A = static_cast<std::size_t>(m.num_actions);
  for (const auto& p : paths)
    for (std::size_t t = 0; t < p.steps.size(); ++t) {
      auto& e = table[visit_key(p, t)];
      if (e.q.empty()) {
        e.q.assign(A, 0.0);
        e.action_mass.assign(A, 0.0);
        Eigen::VectorXd pi = policy.probs(p.steps[t].obs);
        e.pi.assign(pi.data(), pi.data() + pi.size());
      }
      const auto a = static_cast<std::size_t>(p.steps[t].action);
      e.mass += p.prob;
      e.action_mass[a] += p.prob;
      e.q[a] += p.prob * p.steps[t].ret;
    }
  for (auto& [k, e] : table)
    for (std::size_t a = 0; a < A; ++a)
      if (e.action_mass[a] > 0.0) e.q[a] /= e.action_mass[a];
  return table;
}

inline VisitTable visit_table(const EnumerableMDP& m, const TabularPolicy& policy) {
  return visit_table(m, policy, enumerate_paths(m, policy));
}

/// Baseline as a function of (t, omega, z-tail).
using KeyedBaseline = std::function<double(const VisitKey&)>;

inline KeyedBaseline zero_baseline() {
  return [](const VisitKey&) { return 0.0; };
}

/// Per-path gradient sample sum_t score_t * (G_t - b_t).
inline Eigen::VectorXd path_gradient(const TabularPolicy& policy, const Path& p, const KeyedBaseline& b) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.dim());
  for (std::size_t t = 0; t < p.steps.size(); ++t)
    g += policy.score(p.steps[t].obs, p.steps[t].action) * (p.steps[t].ret - b(visit_key(p, t)));
  return g;
}

/// Per-path baseline-only term sum_t score_t * b_t.
inline Eigen::VectorXd path_baseline_term(const TabularPolicy& policy, const Path& p, const KeyedBaseline& b) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.dim());
  for (std::size_t t = 0; t < p.steps.size(); ++t)
    g += policy.score(p.steps[t].obs, p.steps[t].action) * b(visit_key(p, t));
  return g;
}

}  // namespace idb::analysis
