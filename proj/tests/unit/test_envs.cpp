#include <gtest/gtest.h>

#include <sstream>

#include "idb/envs/presets.hpp"

using namespace idb;
using namespace idb::envs;

namespace {

std::vector<int> all_plans_first_action(const AbrConfig& cfg, double buffer, int last, int horizon,
                                        double bw) {
  // brute force over every plan, keeps the lexicographically first maximizer
  const int L = cfg.levels();
  int count = 1;
  for (int i = 0; i < horizon; ++i) count *= L;
  double best = -std::numeric_limits<double>::infinity();
  int best_first = -1;
  for (int code = 0; code < count; ++code) {
    std::vector<int> plan(static_cast<std::size_t>(horizon));
    int c = code;
    for (int i = horizon - 1; i >= 0; --i) {
      plan[static_cast<std::size_t>(i)] = c % L;
      c /= L;
    }
    const double q = simulate_plan_qoe(cfg, buffer, last, plan, bw);
    if (q > best) {
      best = q;
      best_first = plan[0];
    }
  }
  return {best_first, count};
}

}  // namespace

// ---------------------------------------------------------------------------
// Grid walker

TEST(GridWorldStep, Examples) {
  auto r = gridworld_step({0, 0.0}, 1, 1);
  EXPECT_EQ(r.next.position, 2);
  EXPECT_EQ(r.reward, 2.0);
  r = gridworld_step({5, 0.0}, 1, -1);
  EXPECT_EQ(r.next.position, 5);
  EXPECT_EQ(r.reward, 0.0);
  r = gridworld_step({0, 0.0}, -1, -1);
  EXPECT_EQ(r.next.position, -2);
  EXPECT_EQ(r.reward, -2.0);
  EXPECT_THROW(gridworld_step({}, 0, 1), Error);
  EXPECT_THROW(gridworld_step({}, 1, 2), Error);
}

TEST(GridWorldStep, DiscountedRewardSplitsIntoActionAndInputParts) {
  Rng rng(3);
  for (int ep = 0; ep < 200; ++ep) {
    GridWorldState s;
    std::vector<double> r, a, z;
    for (int t = 0; t < 50; ++t) {
      const int at = uniform01(rng) < 0.5 ? -1 : 1, zt = uniform01(rng) < 0.5 ? -1 : 1;
      auto res = gridworld_step(s, at, zt);
      EXPECT_EQ(res.next.position - s.position, at + zt);
      s = res.next;
      r.push_back(res.reward);
      a.push_back(at);
      z.push_back(zt);
    }
    for (double g : {0.5, 0.9, 0.995}) {
      auto gr = discounted_returns(r, g), ga = discounted_returns(a, g), gz = discounted_returns(z, g);
      // integer-valued terms: each prefix is exact in binary for these gammas up to rounding of
      // the same operations, so compare with a tolerance at machine precision
      for (std::size_t t = 0; t < r.size(); ++t) EXPECT_NEAR(gr[t], ga[t] + gz[t], 1e-12 * (1 + std::abs(gr[t])));
    }
  }
}

TEST(GridWorldEnv, ObservationsAndEpisodeLength) {
  GridWorldConfig c;
  c.horizon = 4;
  c.observe_input = true;
  GridWorldEnv env(c);
  InputSequence z(1, 1, {1, -1, 1, 1});
  Observation o = env.reset(z);
  ASSERT_EQ(o.vector.size(), 2u);
  EXPECT_EQ(o.vector[1], 1.0);
  EXPECT_TRUE(o.includes_input);
  StepResult s = env.step(1);  // +1 with z=+1
  EXPECT_EQ(s.reward, 2.0);
  EXPECT_NEAR(s.observation.vector[0], 0.2, 1e-15);
  EXPECT_EQ(s.observation.vector[1], -1.0);
  env.step(0);
  env.step(0);
  EXPECT_TRUE(env.step(0).done);
  EXPECT_EQ(env.state().position, 2 - 1 - 1 + 0 - 1 + 1 - 1 + 1);
  EXPECT_THROW(env.reset(InputSequence(1, 2, {1, 1})), Error);
}

TEST(GridWorldInputs, PersistenceControlsFlipRate) {
  auto iid = gen_gridworld_inputs(100000, 1, 1, 0.5);
  auto sticky = gen_gridworld_inputs(100000, 1, 1, 0.9);
  auto flips = [](const InputSequence& s) {
    int f = 0;
    for (std::size_t t = 1; t < s.length(); ++t) f += s.scalar(t) != s.scalar(t - 1);
    return f / static_cast<double>(s.length() - 1);
  };
  EXPECT_NEAR(flips(iid), 0.5, 0.005);
  EXPECT_NEAR(flips(sticky), 0.1, 0.003);
  for (double v : iid.flat()) EXPECT_TRUE(v == 1.0 || v == -1.0);
  EXPECT_THROW(gen_gridworld_inputs(0, 1, 1), Error);
  EXPECT_THROW(gen_gridworld_inputs(5, 1, 1, 1.5), Error);
}

// ---------------------------------------------------------------------------
// Load balancing

TEST(LoadBalanceInputs, ParetoAndExponentialMoments) {
  LoadBalanceInputParams p;
  p.num_jobs = 1'000'000;
  auto in = gen_loadbalance_inputs(p, 42, 0);
  double s = 0, ia = 0, ia2 = 0, min_size = 1e300;
  for (std::size_t i = 0; i < in.length(); ++i) {
    auto j = job_at(in, i);
    s += j.size;
    ia += j.interarrival;
    ia2 += j.interarrival * j.interarrival;
    min_size = std::min(min_size, j.size);
    ASSERT_GT(j.interarrival, 0.0);
  }
  const double n = static_cast<double>(in.length());
  const double mean_ia = ia / n;
  EXPECT_NEAR(s / n, 300.0, 6.0);
  EXPECT_NEAR(mean_ia, 55.0, 0.55);
  EXPECT_NEAR(ia2 / n - mean_ia * mean_ia, 55.0 * 55.0, 0.05 * 55.0 * 55.0);
  EXPECT_GE(min_size, 100.0);
}

TEST(LoadBalanceInputs, OfferedLoadOfTenServerPreset) {
  LoadBalanceConfig c;
  double capacity = 0;
  for (double r : c.server_rates) capacity += r;
  EXPECT_NEAR(capacity, 6.0, 1e-12);
  const double mean_size = 1.5 * 100.0 / 0.5;
  EXPECT_NEAR(mean_size / 55.0 / capacity, 0.909, 5e-4);
  EXPECT_NEAR(c.server_rates.front(), 0.15, 1e-15);
  EXPECT_NEAR(c.server_rates.back(), 1.05, 1e-15);
}

TEST(LoadBalanceInputs, RejectsInfiniteMean) {
  LoadBalanceInputParams p;
  p.pareto_shape = 1.0;
  try {
    gen_loadbalance_inputs(p, 1, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "infinite-mean workload");
  }
}

TEST(LoadBalanceStep, Examples) {
  auto s = LoadBalanceState::empty({1.0});
  s.incoming_job_size = 10.0;
  auto r = loadbalance_step(s, 0, {5.0, 3.0});
  EXPECT_DOUBLE_EQ(r.reward, -5.0);
  EXPECT_DOUBLE_EQ(r.next.queue_work[0], 5.0);
  EXPECT_DOUBLE_EQ(r.next.incoming_job_size, 3.0);
  EXPECT_DOUBLE_EQ(r.next.sim_clock, 5.0);

  auto empty = LoadBalanceState::empty({1.0, 1.0});
  EXPECT_EQ(loadbalance_step(empty, 1, {7.0, 1.0}).reward, 0.0);

  auto two = LoadBalanceState::empty({1.0, 1.0});
  two.jobs[0].push_back(20.0);
  two.queue_work[0] = 20.0;
  two.incoming_job_size = 20.0;
  EXPECT_DOUBLE_EQ(loadbalance_step(two, 1, {5.0, 1.0}).reward, -10.0);

  EXPECT_THROW(loadbalance_step(two, 2, {5.0, 1.0}), Error);
  EXPECT_THROW(loadbalance_step(two, -1, {5.0, 1.0}), Error);
}

TEST(LoadBalanceStep, ExactIntegrationAcrossACompletion) {
  auto s = LoadBalanceState::empty({1.0});
  s.jobs[0].push_back(2.0);
  s.queue_work[0] = 2.0;
  s.incoming_job_size = 4.0;
  // two jobs for 2 units, then one job for 3 units
  auto exact = loadbalance_step(s, 0, {5.0, 1.0}, RewardMode::exact);
  EXPECT_DOUBLE_EQ(exact.reward, -(2 * 2.0 + 1 * 3.0));
  EXPECT_DOUBLE_EQ(exact.next.queue_work[0], 1.0);
  auto sampled = loadbalance_step(s, 0, {5.0, 1.0}, RewardMode::sampled);
  EXPECT_DOUBLE_EQ(sampled.reward, -10.0);
}

TEST(LoadBalanceEnv, WorkConservationAtEveryArrival) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LoadBalanceEnv env;
    auto in = gen_loadbalance_inputs({}, seed, 0);
    env.reset(in);
    Rng rng(seed);
    bool done = false;
    while (!done) {
      done = env.step(static_cast<int>(rng() % 10)).done;
      const double lhs = env.arrived_work() - env.drained_work();
      const double rhs = env.state().total_work();
      ASSERT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, env.arrived_work()));
      for (double q : env.state().queue_work) ASSERT_GE(q, 0.0);
    }
  }
}

TEST(ShortestQueue, Examples) {
  auto s = LoadBalanceState::empty({1, 1});
  s.queue_work = {3, 7};
  EXPECT_EQ(shortest_queue_action(s), 0);
  s.queue_work = {5, 5};
  EXPECT_EQ(shortest_queue_action(s), 0);
  auto t = LoadBalanceState::empty({1, 1, 1});
  t.queue_work = {2, 1, 4};
  EXPECT_EQ(shortest_queue_action(t), 1);
}

TEST(ShortestQueue, BeatsRandomAssignmentOnIdenticalServers) {
  // Mean time in system = (integral of job count) / jobs, per episode.
  const int episodes = 100;
  double jsq = 0, rnd = 0;
  auto preset = make_preset("motivating2");
  for (int e = 0; e < episodes; ++e) {
    auto in = preset.make_inputs(derive_seed(9, {static_cast<std::uint64_t>(e)}), 0);
    auto run = [&](bool shortest) {
      LoadBalanceEnv env(LoadBalanceConfig{{1.0, 1.0}, RewardMode::exact, 1e-3});
      env.reset(in);
      Rng rng(derive_seed(10, {static_cast<std::uint64_t>(e)}));
      double total = 0;
      bool done = false;
      while (!done) {
        const int a = shortest ? shortest_queue_action(env.state()) : static_cast<int>(rng() % 2);
        auto r = env.step(a);
        total += r.reward;
        done = r.done;
      }
      return -total / static_cast<double>(in.length());
    };
    jsq += run(true);
    rnd += run(false);
  }
  EXPECT_LT(jsq / episodes, rnd / episodes);
}

TEST(LoadBalanceEnv, ObservationLayout) {
  LoadBalanceEnv env(LoadBalanceConfig{{1.0, 2.0}, RewardMode::exact, 0.5});
  InputSequence in(0, 2, {1.0, 10.0, 3.0, 4.0});
  auto o = env.reset(in);
  ASSERT_EQ(o.vector.size(), 3u);
  EXPECT_EQ(o.vector[0], 5.0);
  auto s = env.step(0);
  EXPECT_FALSE(s.done);
  EXPECT_EQ(s.observation.vector[0], 2.0);
  EXPECT_DOUBLE_EQ(s.observation.vector[1], 3.5);
  EXPECT_TRUE(env.step(1).done);
}

// ---------------------------------------------------------------------------
// Bandwidth traces

TEST(BandwidthTrace, ZeroVolatilityIsConstant) {
  SyntheticTraceParams p;
  p.sigma = 0.0;
  p.num_samples = 100;
  auto t = gen_synthetic_trace(p, 1);
  for (const auto& s : t.samples) EXPECT_EQ(s.bandwidth, t.samples[0].bandwidth);
}

TEST(BandwidthTrace, ReflectionKeepsSamplesInBounds) {
  SyntheticTraceParams p;
  p.num_samples = 100000;
  p.sigma = 0.5;
  auto t = gen_synthetic_trace(p, 2);
  for (const auto& s : t.samples) {
    ASSERT_GE(s.bandwidth, p.lo * (1 - 1e-12));
    ASSERT_LE(s.bandwidth, p.hi * (1 + 1e-12));
  }
  p.lo = 0;
  EXPECT_THROW(gen_synthetic_trace(p, 1), Error);
}

TEST(BandwidthTrace, CsvParse) {
  std::istringstream is("0,1000000\n1,2000000");
  auto t = read_bandwidth_csv(is);
  ASSERT_EQ(t.samples.size(), 2u);
  EXPECT_EQ(t.samples[0].bandwidth, 1e6);
  EXPECT_EQ(t.samples[1].bandwidth, 2e6);
  EXPECT_EQ(t.source, TraceSource::file);

  std::ostringstream os;
  write_bandwidth_csv(os, t);
  std::istringstream back(os.str());
  EXPECT_EQ(read_bandwidth_csv(back).samples.size(), 2u);
}

TEST(BandwidthTrace, CsvErrorsCarryLineNumbers) {
  auto message = [](const std::string& text) {
    std::istringstream is(text);
    try {
      read_bandwidth_csv(is);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("0,1\n1;2\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("0,1\n2,1\n1,1\n").find("non-monotone timestamp at line 3"), std::string::npos);
  EXPECT_NE(message("0,1\n1,x\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("0,-1\n").find("line 1"), std::string::npos);
  EXPECT_FALSE(message("").empty());
}

TEST(DownloadDuration, IntegratesAcrossSamples) {
  BandwidthTrace t;
  t.samples = {{0, 100}, {1, 200}, {2, 400}};
  EXPECT_DOUBLE_EQ(download_duration(t, 0, 50, false), 0.5);
  EXPECT_DOUBLE_EQ(download_duration(t, 0, 300, false), 2.0);
  EXPECT_DOUBLE_EQ(download_duration(t, 0.5, 150, false), 1.0);
  EXPECT_THROW(download_duration(t, 0, 1000, false), Error);
  // looping: 700 bytes per 3 s period
  EXPECT_DOUBLE_EQ(download_duration(t, 0, 800, true), 4.0);
  EXPECT_DOUBLE_EQ(download_duration(t, 3.0, 100, true), 1.0);
}

// ---------------------------------------------------------------------------
// ABR

namespace {

AbrConfig single_level(double kbps) {
  AbrConfig c;
  c.bitrates_kbps = {kbps};
  return c;
}

BandwidthTrace constant_trace(double bw, int n = 10000) {
  BandwidthTrace t;
  for (int i = 0; i < n; ++i) t.samples.push_back({static_cast<double>(i), bw});
  return t;
}

}  // namespace

TEST(AbrStep, Examples) {
  AbrConfig c = single_level(2000.0);  // 10^6 bytes per 4 s chunk
  EXPECT_DOUBLE_EQ(c.chunk_bytes(0), 1e6);
  AbrState s;
  s.buffer = 4.0;
  s.chunks_remaining = 3;
  auto r = abr_step(s, 0, constant_trace(1e6), c);
  EXPECT_DOUBLE_EQ(r.download_time, 1.0);
  EXPECT_EQ(r.rebuffer, 0.0);
  EXPECT_DOUBLE_EQ(r.next.buffer, 7.0);
  EXPECT_EQ(r.next.chunks_remaining, 2);

  // download equal to the buffer
  auto eq = abr_step(s, 0, constant_trace(2.5e5), c);
  EXPECT_DOUBLE_EQ(eq.download_time, 4.0);
  EXPECT_EQ(eq.rebuffer, 0.0);
  EXPECT_DOUBLE_EQ(eq.next.buffer, 4.0);

  // 6 s download from a 4 s buffer
  auto slow = abr_step(s, 0, constant_trace(1e6 / 6.0), c);
  EXPECT_NEAR(slow.download_time, 6.0, 1e-12);
  EXPECT_NEAR(slow.rebuffer, 2.0, 1e-12);
  EXPECT_NEAR(slow.reward, 2.0 - 4.3 * 2.0, 1e-12);
}

TEST(AbrStep, BufferCapAndErrors) {
  AbrConfig c = single_level(2000.0);
  AbrState s;
  s.buffer = 59.5;
  s.chunks_remaining = 1;
  auto r = abr_step(s, 0, constant_trace(1e6), c);
  EXPECT_DOUBLE_EQ(r.next.buffer, 60.0);
  EXPECT_DOUBLE_EQ(r.sleep, 2.5);
  EXPECT_THROW(abr_step(r.next, 0, constant_trace(1e6), c), Error);
  EXPECT_THROW(abr_step(s, 1, constant_trace(1e6), c), Error);

  AbrConfig d;
  AbrState z;
  z.chunks_remaining = 500;
  try {
    abr_step(z, 6, constant_trace(1e3, 2), d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "trace too short");
  }
}

TEST(AbrConfig, DefaultLadder) {
  AbrConfig c;
  ASSERT_EQ(c.levels(), 7);
  EXPECT_NEAR(c.bitrates_kbps.front(), 300.0, 1e-9);
  EXPECT_NEAR(c.bitrates_kbps.back(), 4800.0, 1e-9);
  for (int i = 1; i < 7; ++i) EXPECT_NEAR(c.bitrates_kbps[i] / c.bitrates_kbps[i - 1], std::pow(16.0, 1.0 / 6), 1e-12);
  EXPECT_DOUBLE_EQ(c.quality(6), 4.8);
  EXPECT_EQ(c.num_chunks, 500);
}

TEST(AbrEnv, BufferInvariantsAndPlaybackAccounting) {
  auto preset = make_preset("abr");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto env = preset.make_env();
    auto& abr = dynamic_cast<AbrEnv&>(*env);
    abr.reset(preset.make_inputs(seed, 0));
    Rng rng(seed);
    double rebuffer = 0, chunks = 0;
    bool done = false;
    int steps = 0;
    while (!done) {
      auto r = abr.step(static_cast<int>(rng() % 7));
      ASSERT_GE(abr.state().buffer, 0.0);
      ASSERT_LE(abr.state().buffer, abr.config().buffer_max + 1e-9);
      ASSERT_GE(abr.last_step().rebuffer, 0.0);
      rebuffer += abr.last_step().rebuffer;
      chunks += abr.config().chunk_duration;
      done = r.done;
      ++steps;
    }
    EXPECT_EQ(steps, 500);
    EXPECT_NEAR(rebuffer, abr.total_rebuffer(), 1e-9);
    // content fetched = content played + content still buffered; wall time = played + stalls
    const double wall = abr.state().trace_time - abr.trace().start_time();
    EXPECT_NEAR(chunks + rebuffer, wall + abr.state().buffer, 1e-6 * wall);
  }
}

TEST(Mpc, DominantAndColdStartCases) {
  AbrConfig c;
  AbrState s;
  s.buffer = 50.0;
  s.chunks_remaining = 100;
  s.last_bitrate_index = 6;
  EXPECT_EQ(mpc_abr_action(s, c, 1e12, 1), 6);
  EXPECT_EQ(mpc_abr_action(s, c, 1e-6, 5), 0);
  EXPECT_EQ(mpc_abr_action(s, c, 0.0, 5), 0);
  ThroughputPredictor empty;
  EXPECT_EQ(mpc_abr_action(s, c, empty, 5), 0);
  EXPECT_THROW(mpc_abr_action(s, c, 1e6, 0), Error);
}

TEST(Mpc, MatchesBruteForceOverAllTwoChunkPlans) {
  AbrConfig c;
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    AbrState s;
    s.buffer = 20.0 * uniform01(rng);
    s.last_bitrate_index = static_cast<int>(rng() % 7);
    s.chunks_remaining = 2;
    const double bw = 2e4 + 8e5 * uniform01(rng);
    auto oracle = all_plans_first_action(c, s.buffer, s.last_bitrate_index, 2, bw);
    EXPECT_EQ(oracle[1], 49);
    EXPECT_EQ(mpc_abr_action(s, c, bw, 2), oracle[0]) << trial;
  }
}

TEST(ThroughputPredictor, HarmonicMeanDiscountedByPastError) {
  ThroughputPredictor p(5);
  p.observe(100);
  EXPECT_DOUBLE_EQ(p.predict(), 100.0);
  p.observe(50);  // predicted 100, error |100-50|/50 = 1
  EXPECT_DOUBLE_EQ(p.harmonic_mean(), 2.0 / (1.0 / 100 + 1.0 / 50));
  EXPECT_DOUBLE_EQ(p.predict(), p.harmonic_mean() / 2.0);
}

// ---------------------------------------------------------------------------
// Presets

TEST(Presets, EveryPresetRunsAnEpisode) {
  for (const auto& name : preset_names()) {
    PresetOptions o;
    o.episode_length = 20;
    auto p = make_preset(name, o);
    auto env = p.make_env();
    auto in = p.make_inputs(1, 0);
    auto obs = env->reset(in);
    EXPECT_EQ(static_cast<int>(obs.vector.size()), env->observation_dim());
    int steps = 0;
    bool done = false;
    while (!done && steps < p.max_steps) {
      done = env->step(0).done;
      ++steps;
    }
    EXPECT_TRUE(done) << name;
    EXPECT_EQ(steps, 20) << name;
  }
  EXPECT_THROW(make_preset("nope"), Error);
  PresetOptions bad;
  bad.reward_mode = "fast";
  EXPECT_THROW(make_preset("motivating2", bad), Error);
}

TEST(Presets, SequenceIdRangesAndSeedsAreDisjoint) {
  auto p = make_preset("gridworld");
  auto train = train_set(p, 7, 3);
  auto test = test_set(p, 7, 3);
  EXPECT_EQ(train[2].id(), 2u);
  EXPECT_EQ(test[0].id(), kTestIdBase);
  EXPECT_EQ(fresh_inputs(p, 7, 3, 1, 4).id(), kFreshIdBase + 13);
  EXPECT_NE(train[0].flat(), test[0].flat());
  EXPECT_EQ(train_inputs(p, 7, 1).flat(), train[1].flat());
}
