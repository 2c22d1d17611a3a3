#pragma once

// Load balancing over k FIFO servers with heterogeneous processing rates.
// Jobs (Pareto sizes, Poisson arrivals) are the exogenous input; on each
// arrival the agent picks the server for the incoming job. The reward over
// the interval until the next arrival is minus the time-integral of the
// number of jobs in the system.

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <numeric>
#include <vector>

#include "idb/core.hpp"

namespace idb::envs {

struct JobArrival {
  double interarrival = 0.0;
  double size = 0.0;
};

struct LoadBalanceInputParams {
  int num_jobs = 500;
  double pareto_scale = 100.0;
  double pareto_shape = 1.5;
  double mean_interarrival = 55.0;
};

/// Input values are (interarrival, size) pairs.
inline InputSequence gen_loadbalance_inputs(const LoadBalanceInputParams& p, std::uint64_t seed,
                                            SequenceId id) {
  if (p.pareto_shape <= 1.0) throw Error("infinite-mean workload");
  if (p.num_jobs < 1 || p.pareto_scale <= 0.0 || p.mean_interarrival <= 0.0)
    throw Error("invalid load-balance input parameters");
  Rng rng(seed);
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(p.num_jobs) * 2);
  for (int i = 0; i < p.num_jobs; ++i) {
    flat.push_back(-p.mean_interarrival * std::log(uniform_open01(rng)));
    flat.push_back(p.pareto_scale / std::pow(uniform_open01(rng), 1.0 / p.pareto_shape));
  }
  return InputSequence(id, 2, std::move(flat));
}

inline JobArrival job_at(const InputSequence& inputs, std::size_t i) {
  auto v = inputs.at(i);
  return {v[0], v[1]};
}

enum class RewardMode { exact, sampled };

struct LoadBalanceState {
  double incoming_job_size = 0.0;
  std::vector<double> queue_work;    // remaining work per server
  std::vector<double> server_rates;  // work units per time unit
  double sim_clock = 0.0;
  std::vector<std::deque<double>> jobs;  // remaining work of each queued job, FIFO

  static LoadBalanceState empty(std::vector<double> rates) {
    LoadBalanceState s;
    s.queue_work.assign(rates.size(), 0.0);
    s.jobs.resize(rates.size());
    s.server_rates = std::move(rates);
    return s;
  }

  std::size_t jobs_in_system() const {
    std::size_t n = 0;
    for (const auto& q : jobs) n += q.size();
    return n;
  }
  double total_work() const { return std::accumulate(queue_work.begin(), queue_work.end(), 0.0); }
};

struct LoadBalanceStepResult {
  LoadBalanceState next;
  double reward = 0.0;
  double work_drained = 0.0;
};

namespace detail {

// Advances one FIFO server by tau; returns integral of its job count.
inline double drain_server(std::deque<double>& q, double rate, double tau, double& drained) {
  double elapsed = 0.0;
  double area = 0.0;
  while (!q.empty() && elapsed < tau) {
    const double need = q.front() / rate;
    const double left = tau - elapsed;
    if (need <= left) {
      area += static_cast<double>(q.size()) * need;
      drained += q.front();
      elapsed += need;
      q.pop_front();
    } else {
      area += static_cast<double>(q.size()) * left;
      drained += rate * left;
      q.front() -= rate * left;
      elapsed = tau;
    }
  }
  return area;
}

}  // namespace detail

/// Enqueues the incoming job on `action`, then advances the system to the
/// next arrival. Exact mode integrates the job count piecewise between
/// completions; sampled mode charges tau times the count right after the
/// assignment.
inline LoadBalanceStepResult loadbalance_step(const LoadBalanceState& state, int action,
                                              const JobArrival& next_arrival,
                                              RewardMode mode = RewardMode::exact) {
  const int k = static_cast<int>(state.server_rates.size());
  if (action < 0 || action >= k) throw Error("load-balance action out of range");
  if (next_arrival.interarrival < 0.0) throw Error("negative interarrival time");
  LoadBalanceStepResult out;
  out.next = state;
  LoadBalanceState& s = out.next;
  if (state.incoming_job_size > 0.0) s.jobs[static_cast<std::size_t>(action)].push_back(state.incoming_job_size);

  const double tau = next_arrival.interarrival;
  const double count_after_assign = static_cast<double>(s.jobs_in_system());
  double area = 0.0;
  for (int i = 0; i < k; ++i)
    area += detail::drain_server(s.jobs[static_cast<std::size_t>(i)], s.server_rates[static_cast<std::size_t>(i)],
                                 tau, out.work_drained);
  for (int i = 0; i < k; ++i) {
    const auto& q = s.jobs[static_cast<std::size_t>(i)];
    s.queue_work[static_cast<std::size_t>(i)] = std::accumulate(q.begin(), q.end(), 0.0);
  }
  s.sim_clock += tau;
  s.incoming_job_size = next_arrival.size;
  out.reward = mode == RewardMode::exact ? -area : -tau * count_after_assign;
  return out;
}

/// Server with the least remaining work; ties go to the lowest index.
inline int shortest_queue_action(const LoadBalanceState& state) {
  if (state.queue_work.empty()) throw Error("no servers");
  return static_cast<int>(std::min_element(state.queue_work.begin(), state.queue_work.end()) -
                          state.queue_work.begin());
}

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
  return v;
}

struct LoadBalanceConfig {
  std::vector<double> server_rates = linspace(0.15, 1.05, 10);
  RewardMode reward_mode = RewardMode::exact;
  double obs_scale = 1e-3;
};

/// Observation: (j, q_1, ..., q_k) scaled by obs_scale. One step per job; the
/// episode ends after the last job of the sequence is assigned.
class LoadBalanceEnv final : public Environment {
 public:
  explicit LoadBalanceEnv(LoadBalanceConfig config = {}) : config_(std::move(config)) {
    if (config_.server_rates.empty()) throw Error("load balancer needs at least one server");
    for (double r : config_.server_rates)
      if (!(r > 0.0)) throw Error("server rates must be positive");
  }

  std::string name() const override { return "loadbalance"; }
  int observation_dim() const override { return 1 + num_servers(); }
  int num_actions() const override { return num_servers(); }
  int num_servers() const { return static_cast<int>(config_.server_rates.size()); }

  Observation reset(const InputSequence& inputs) override {
    if (inputs.dim() != 2) throw Error("load-balance inputs are (interarrival, size) pairs");
    inputs_ = inputs;
    state_ = LoadBalanceState::empty(config_.server_rates);
    state_.incoming_job_size = job_at(inputs_, 0).size;
    index_ = 0;
    arrived_work_ = 0.0;
    drained_work_ = 0.0;
    return observe();
  }

  StepResult step(int action) override {
    StepResult out;
    const bool last = index_ + 1 >= inputs_.length();
    const JobArrival next = last ? JobArrival{0.0, 0.0} : job_at(inputs_, index_ + 1);
    arrived_work_ += state_.incoming_job_size;
    auto r = loadbalance_step(state_, action, next, config_.reward_mode);
    drained_work_ += r.work_drained;
    state_ = std::move(r.next);
    out.reward = r.reward;
    ++index_;
    out.done = last;
    if (!last) out.observation = observe();
    return out;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<LoadBalanceEnv>(*this);
  }

  const LoadBalanceState& state() const { return state_; }
  double arrived_work() const { return arrived_work_; }
  double drained_work() const { return drained_work_; }
  const LoadBalanceConfig& config() const { return config_; }

  static Observation make_observation(double job_size, const std::vector<double>& queue_work,
                                      double scale) {
    Observation o;
    o.vector.reserve(queue_work.size() + 1);
    o.vector.push_back(job_size * scale);
    for (double q : queue_work) o.vector.push_back(q * scale);
    return o;
  }

 private:
  Observation observe() const {
    return make_observation(state_.incoming_job_size, state_.queue_work, config_.obs_scale);
  }

  LoadBalanceConfig config_;
  InputSequence inputs_;
  LoadBalanceState state_;
  std::size_t index_ = 0;
  double arrived_work_ = 0.0;
  double drained_work_ = 0.0;
};

}  // namespace idb::envs
