#pragma once

// Adaptive-bitrate video streaming over a time-varying bandwidth trace. The
// trace is the exogenous input; each step downloads one chunk at the chosen
// bitrate.

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "idb/core.hpp"

namespace idb::envs {

// ---------------------------------------------------------------------------
// Bandwidth traces

struct BandwidthSample {
  double time = 0.0;       // seconds
  double bandwidth = 0.0;  // bytes per second
};

enum class TraceSource { file, synthetic };

/// Sample i holds over [time_i, time_{i+1}); the last sample holds for the
/// same span as the interval before it (1 s for a single-sample trace).
struct BandwidthTrace {
  std::vector<BandwidthSample> samples;
  TraceSource source = TraceSource::synthetic;

  void validate() const {
    if (samples.empty()) throw Error("bandwidth trace is empty");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!(samples[i].bandwidth > 0.0) || !std::isfinite(samples[i].bandwidth))
        throw Error("bandwidth must be positive (sample " + std::to_string(i) + ")");
      if (i > 0 && !(samples[i].time > samples[i - 1].time))
        throw Error("trace timestamps must be strictly increasing (sample " + std::to_string(i) + ")");
    }
  }

  double start_time() const { return samples.front().time; }
  double end_time() const {
    const double last_span =
        samples.size() > 1 ? samples.back().time - samples[samples.size() - 2].time : 1.0;
    return samples.back().time + last_span;
  }
  double segment_end(std::size_t i) const {
    return i + 1 < samples.size() ? samples[i + 1].time : end_time();
  }
};

struct SyntheticTraceParams {
  double lo = 31'250.0;   // 0.25 Mbit/s
  double hi = 750'000.0;  // 6 Mbit/s
  double sigma = 0.1;     // log-bandwidth step volatility
  double step_seconds = 1.0;
  int num_samples = 3000;
  double start = 0.0;  // initial bandwidth; 0 = geometric midpoint of [lo, hi]
};

/// Reflected geometric random walk on [lo, hi].
inline BandwidthTrace gen_synthetic_trace(const SyntheticTraceParams& p, std::uint64_t seed) {
  if (!(p.lo > 0.0 && p.lo < p.hi)) throw Error("synthetic trace needs 0 < lo < hi");
  if (p.sigma < 0.0) throw Error("synthetic trace volatility must be >= 0");
  if (p.num_samples < 1 || !(p.step_seconds > 0.0)) throw Error("invalid synthetic trace length");
  const double llo = std::log(p.lo);
  const double lhi = std::log(p.hi);
  double x = p.start > 0.0 ? std::log(p.start) : 0.5 * (llo + lhi);
  x = std::clamp(x, llo, lhi);
  Rng rng(seed);
  BandwidthTrace trace;
  trace.source = TraceSource::synthetic;
  trace.samples.reserve(static_cast<std::size_t>(p.num_samples));
  for (int i = 0; i < p.num_samples; ++i) {
    trace.samples.push_back({i * p.step_seconds, std::exp(x)});
    if (p.sigma > 0.0) {
      x += p.sigma * standard_normal(rng);
      // reflect until inside; the loop handles steps larger than the band
      while (x < llo || x > lhi) x = x < llo ? 2 * llo - x : 2 * lhi - x;
    }
  }
  return trace;
}

/// Header-less CSV, one `time_seconds,bytes_per_second` pair per line.
inline BandwidthTrace read_bandwidth_csv(std::istream& is) {
  BandwidthTrace trace;
  trace.source = TraceSource::file;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ss(line);
    double t = 0.0, bw = 0.0;
    char comma = 0;
    std::string rest;
    if (!(ss >> t >> comma >> bw) || comma != ',' || (ss >> rest))
      throw Error("bandwidth trace parse error at line " + std::to_string(lineno));
    if (!trace.samples.empty() && !(t > trace.samples.back().time))
      throw Error("non-monotone timestamp at line " + std::to_string(lineno));
    if (!(bw > 0.0)) throw Error("non-positive bandwidth at line " + std::to_string(lineno));
    trace.samples.push_back({t, bw});
  }
  trace.validate();
  return trace;
}

inline BandwidthTrace load_bandwidth_trace(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open trace file " + path);
  return read_bandwidth_csv(f);
}

inline void write_bandwidth_csv(std::ostream& os, const BandwidthTrace& trace) {
  os.precision(17);
  for (const auto& s : trace.samples) os << s.time << ',' << s.bandwidth << '\n';
}

enum class TraceKind { markov_synthetic, from_file };

/// Either a synthetic trace from `params` or a CSV file at `path`.
inline BandwidthTrace gen_bandwidth_trace(TraceKind kind, const SyntheticTraceParams& params,
                                          const std::string& path, std::uint64_t seed) {
  return kind == TraceKind::markov_synthetic ? gen_synthetic_trace(params, seed)
                                             : load_bandwidth_trace(path);
}

inline InputSequence trace_to_inputs(const BandwidthTrace& trace, SequenceId id) {
  std::vector<double> flat;
  flat.reserve(trace.samples.size() * 2);
  for (const auto& s : trace.samples) {
    flat.push_back(s.time);
    flat.push_back(s.bandwidth);
  }
  return InputSequence(id, 2, std::move(flat));
}

inline BandwidthTrace inputs_to_trace(const InputSequence& inputs) {
  if (inputs.dim() != 2) throw Error("bandwidth inputs are (time, bandwidth) pairs");
  BandwidthTrace trace;
  for (std::size_t i = 0; i < inputs.length(); ++i) trace.samples.push_back({inputs.at(i)[0], inputs.at(i)[1]});
  trace.validate();
  return trace;
}

/// Seconds needed to fetch `bytes` starting at trace time `start`.
inline double download_duration(const BandwidthTrace& trace, double start, double bytes, bool loop) {
  const double t0 = trace.start_time();
  const double period = trace.end_time() - t0;
  double offset = 0.0;  // added when wrapping around a looped trace
  double t = start;
  if (loop && t >= trace.end_time()) {
    const double wraps = std::floor((t - t0) / period);
    offset = wraps * period;
    t -= offset;
  }
  double remaining = bytes;
  auto it = std::upper_bound(trace.samples.begin(), trace.samples.end(), t,
                             [](double v, const BandwidthSample& s) { return v < s.time; });
  std::size_t i = it == trace.samples.begin() ? 0 : static_cast<std::size_t>(it - trace.samples.begin()) - 1;
  if (t < t0) t = t0;
  while (true) {
    if (i >= trace.samples.size()) {
      if (!loop) throw Error("trace too short");
      i = 0;
      t = t0;
      offset += period;
    }
    const double seg_end = trace.segment_end(i);
    const double bw = trace.samples[i].bandwidth;
    const double can = (seg_end - t) * bw;
    if (can >= remaining) {
      t += remaining / bw;
      return t + offset - start;
    }
    remaining -= can;
    t = seg_end;
    ++i;
  }
}

// ---------------------------------------------------------------------------
// Streaming session

inline std::vector<double> default_bitrate_ladder() {
  // 7 geometrically spaced levels, 300 .. 4800 kbit/s
  std::vector<double> v(7);
  for (int i = 0; i < 7; ++i) v[static_cast<std::size_t>(i)] = 300.0 * std::pow(16.0, i / 6.0);
  return v;
}

struct AbrConfig {
  std::vector<double> bitrates_kbps = default_bitrate_ladder();
  double chunk_duration = 4.0;  // seconds
  double buffer_max = 60.0;     // seconds
  int num_chunks = 500;
  double w_quality = 1.0;
  double w_rebuffer = 4.3;
  double w_smooth = 1.0;
  int history = 8;
  bool loop_trace = false;
  int initial_bitrate = 0;

  int levels() const { return static_cast<int>(bitrates_kbps.size()); }
  double quality(int i) const { return bitrates_kbps.at(static_cast<std::size_t>(i)) / 1000.0; }
  double chunk_bytes(int i) const {
    return bitrates_kbps.at(static_cast<std::size_t>(i)) * 1000.0 / 8.0 * chunk_duration;
  }
};

struct AbrState {
  double buffer = 0.0;  // seconds
  int last_bitrate_index = 0;
  int chunks_remaining = 0;
  std::deque<double> bandwidth_history;  // observed throughputs (bytes/s), newest last
  double trace_time = 0.0;
};

struct AbrStepResult {
  AbrState next;
  double reward = 0.0;
  double download_time = 0.0;
  double rebuffer = 0.0;
  double sleep = 0.0;  // idle time waiting for buffer room
};

inline double abr_reward(const AbrConfig& cfg, int action, int last, double rebuffer) {
  return cfg.w_quality * cfg.quality(action) - cfg.w_rebuffer * rebuffer -
         cfg.w_smooth * std::abs(cfg.quality(action) - cfg.quality(last));
}

inline AbrStepResult abr_step(const AbrState& state, int action, const BandwidthTrace& trace,
                              const AbrConfig& cfg) {
  if (action < 0 || action >= cfg.levels()) throw Error("bitrate index out of range");
  if (state.chunks_remaining <= 0) throw Error("no chunks remaining");
  AbrStepResult out;
  out.next = state;
  AbrState& s = out.next;
  const double bytes = cfg.chunk_bytes(action);
  out.download_time = download_duration(trace, state.trace_time, bytes, cfg.loop_trace);
  out.rebuffer = std::max(out.download_time - state.buffer, 0.0);
  s.buffer = std::max(state.buffer - out.download_time, 0.0) + cfg.chunk_duration;
  out.sleep = std::max(s.buffer - cfg.buffer_max, 0.0);
  s.buffer -= out.sleep;
  s.trace_time = state.trace_time + out.download_time + out.sleep;
  s.bandwidth_history.push_back(bytes / out.download_time);
  while (static_cast<int>(s.bandwidth_history.size()) > cfg.history) s.bandwidth_history.pop_front();
  s.last_bitrate_index = action;
  s.chunks_remaining -= 1;
  out.reward = abr_reward(cfg, action, state.last_bitrate_index, out.rebuffer);
  return out;
}

/// Observation: (quality(last)/quality(max), buffer/10 s, chunks remaining
/// fraction, last `history` throughputs in MB/s, zero-padded, oldest first).
class AbrEnv final : public Environment {
 public:
  explicit AbrEnv(AbrConfig config = {}) : config_(std::move(config)) {
    if (config_.levels() < 1) throw Error("bitrate ladder is empty");
  }

  std::string name() const override { return "abr"; }
  int observation_dim() const override { return 3 + config_.history; }
  int num_actions() const override { return config_.levels(); }

  Observation reset(const InputSequence& inputs) override {
    trace_ = inputs_to_trace(inputs);
    state_ = AbrState{};
    state_.last_bitrate_index = config_.initial_bitrate;
    state_.chunks_remaining = config_.num_chunks;
    state_.trace_time = trace_.start_time();
    total_rebuffer_ = 0.0;
    return observe();
  }

  StepResult step(int action) override {
    auto r = abr_step(state_, action, trace_, config_);
    state_ = std::move(r.next);
    total_rebuffer_ += r.rebuffer;
    last_ = r;
    StepResult out;
    out.reward = r.reward;
    out.done = state_.chunks_remaining == 0;
    if (!out.done) out.observation = observe();
    return out;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<AbrEnv>(*this); }

  const AbrState& state() const { return state_; }
  const AbrConfig& config() const { return config_; }
  const BandwidthTrace& trace() const { return trace_; }
  double total_rebuffer() const { return total_rebuffer_; }
  const AbrStepResult& last_step() const { return last_; }

 private:
  Observation observe() const {
    Observation o;
    o.vector.reserve(static_cast<std::size_t>(observation_dim()));
    o.vector.push_back(config_.quality(state_.last_bitrate_index) / config_.quality(config_.levels() - 1));
    o.vector.push_back(state_.buffer / 10.0);
    o.vector.push_back(static_cast<double>(state_.chunks_remaining) / config_.num_chunks);
    const int pad = config_.history - static_cast<int>(state_.bandwidth_history.size());
    for (int i = 0; i < pad; ++i) o.vector.push_back(0.0);
    for (double b : state_.bandwidth_history) o.vector.push_back(b * 1e-6);
    return o;
  }

  AbrConfig config_;
  BandwidthTrace trace_;
  AbrState state_;
  AbrStepResult last_;
  double total_rebuffer_ = 0.0;
};

// ---------------------------------------------------------------------------
// Model predictive control heuristic

/// Conservative throughput predictor: harmonic mean of the last `window`
/// throughputs, divided by (1 + max relative prediction error over the same
/// window).
class ThroughputPredictor {
 public:
  explicit ThroughputPredictor(int window = 5) : window_(window) {}

  void observe(double throughput) {
    if (last_prediction_ > 0.0 && throughput > 0.0)
      push(errors_, std::abs(last_prediction_ - throughput) / throughput);
    push(history_, throughput);
    last_prediction_ = harmonic_mean();
  }

  double harmonic_mean() const {
    if (history_.empty()) return 0.0;
    double inv = 0.0;
    for (double h : history_) inv += 1.0 / h;
    return static_cast<double>(history_.size()) / inv;
  }

  double predict() const {
    if (history_.empty()) return 0.0;
    double max_err = 0.0;
    for (double e : errors_) max_err = std::max(max_err, e);
    return harmonic_mean() / (1.0 + max_err);
  }

  bool empty() const { return history_.empty(); }

 private:
  void push(std::deque<double>& d, double v) {
    d.push_back(v);
    while (static_cast<int>(d.size()) > window_) d.pop_front();
  }

  int window_;
  std::deque<double> history_;
  std::deque<double> errors_;
  double last_prediction_ = 0.0;
};

/// QoE of a bitrate plan under a constant predicted bandwidth.
inline double simulate_plan_qoe(const AbrConfig& cfg, double buffer, int last,
                                const std::vector<int>& plan, double bandwidth) {
  double qoe = 0.0;
  for (int a : plan) {
    const double d = cfg.chunk_bytes(a) / bandwidth;
    const double rebuf = std::max(d - buffer, 0.0);
    buffer = std::min(std::max(buffer - d, 0.0) + cfg.chunk_duration, cfg.buffer_max);
    qoe += abr_reward(cfg, a, last, rebuf);
    last = a;
  }
  return qoe;
}

namespace detail {

struct PlanSearch {
  const AbrConfig& cfg;
  double bandwidth;
  int horizon;
  double best = -std::numeric_limits<double>::infinity();
  int best_first = 0;

  // Depth-first over plans in lexicographic order; strict improvement keeps
  // the first maximizer.
  void visit(int depth, double buffer, int last, double qoe, int first) {
    if (depth == horizon) {
      if (qoe > best) {
        best = qoe;
        best_first = first;
      }
      return;
    }
    for (int a = 0; a < cfg.levels(); ++a) {
      const double d = cfg.chunk_bytes(a) / bandwidth;
      const double rebuf = std::max(d - buffer, 0.0);
      const double next = std::min(std::max(buffer - d, 0.0) + cfg.chunk_duration, cfg.buffer_max);
      visit(depth + 1, next, a, qoe + abr_reward(cfg, a, last, rebuf), depth == 0 ? a : first);
    }
  }
};

}  // namespace detail

/// Exhaustive search over levels^horizon plans; returns the first action of
/// the best plan (first in lexicographic order on ties). Falls back to the
/// lowest bitrate when no positive bandwidth prediction exists.
inline int mpc_abr_action(const AbrState& state, const AbrConfig& cfg, double predicted_bandwidth,
                          int horizon = 5) {
  if (horizon < 1) throw Error("mpc horizon must be >= 1");
  if (!(predicted_bandwidth > 0.0) || !std::isfinite(predicted_bandwidth)) return 0;
  const int h = std::max(1, std::min(horizon, state.chunks_remaining));
  detail::PlanSearch search{cfg, predicted_bandwidth, h};
  search.visit(0, state.buffer, state.last_bitrate_index, 0.0, 0);
  return search.best_first;
}

inline int mpc_abr_action(const AbrState& state, const AbrConfig& cfg,
                          const ThroughputPredictor& history, int horizon = 5) {
  if (history.empty()) return 0;
  return mpc_abr_action(state, cfg, history.predict(), horizon);
}

}  // namespace idb::envs
