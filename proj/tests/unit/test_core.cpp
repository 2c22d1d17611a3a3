#include <gtest/gtest.h>

#include <sstream>

#include "idb/core.hpp"
#include "idb/envs/gridworld.hpp"

using namespace idb;

namespace {

// Single action, reward 1 per step, fixed-length episodes.
class ConstantEnv final : public Environment {
 public:
  std::string name() const override { return "constant"; }
  int observation_dim() const override { return 1; }
  int num_actions() const override { return 1; }
  Observation reset(const InputSequence& inputs) override {
    len_ = static_cast<int>(inputs.length());
    t_ = 0;
    return {{0.0}, false};
  }
  StepResult step(int) override {
    ++t_;
    return {{{static_cast<double>(t_)}, false}, 1.0, t_ >= len_};
  }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<ConstantEnv>(*this); }

 private:
  int len_ = 0, t_ = 0;
};

nn::MlpParams zero_gridworld_policy(bool observe_input = false) {
  return nn::MlpParams(nn::two_hidden(observe_input ? 2 : 1, 2));
}

bool same_trajectory(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size() || a.input_seq_id != b.input_seq_id || a.total_steps != b.total_steps) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.transitions[i];
    const auto& y = b.transitions[i];
    if (x.observation.vector != y.observation.vector || x.action != y.action || x.log_prob != y.log_prob ||
        x.reward != y.reward || x.t != y.t || x.done != y.done)
      return false;
  }
  return true;
}

}  // namespace

TEST(InputSequence, RejectsEmptyAndRaggedValues) {
  EXPECT_THROW(InputSequence(0, 1, {}), Error);
  EXPECT_THROW(InputSequence(0, 2, {1.0, 2.0, 3.0}), Error);
  EXPECT_THROW(InputSequence::from_rows(0, {{1.0, 2.0}, {3.0}}), Error);
  auto s = InputSequence::from_rows(7, {{1.0, 2.0}, {3.0, 4.0}});
  EXPECT_EQ(s.length(), 2u);
  EXPECT_EQ(s.dim(), 2);
  EXPECT_EQ(s.id(), 7u);
  EXPECT_EQ(s.at(1)[1], 4.0);
}

TEST(InputSequence, ReadingPastTheEndIsInputExhausted) {
  InputSequence s(0, 1, {1.0});
  try {
    s.at(1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("input exhausted"), std::string::npos);
  }
}

TEST(Rollout, SingleActionEnvHasZeroLogProb) {
  ConstantEnv env;
  nn::MlpParams policy(nn::MlpConfig{{1, 1}});
  Trajectory t = rollout(policy, env, InputSequence(0, 1, {0, 0, 0}), 10, 1);
  ASSERT_EQ(t.size(), 3u);
  for (const auto& tr : t.transitions) EXPECT_EQ(tr.log_prob, 0.0);
  EXPECT_TRUE(t.transitions.back().done);
  EXPECT_EQ(t.total_steps, 3);
}

TEST(Rollout, StepCapMarksTheLastTransitionDone) {
  ConstantEnv env;
  nn::MlpParams policy(nn::MlpConfig{{1, 1}});
  Trajectory t = rollout(policy, env, InputSequence(0, 1, std::vector<double>(10, 0.0)), 4, 1);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_TRUE(t.transitions.back().done);
  for (std::size_t i = 0; i + 1 < t.size(); ++i) EXPECT_FALSE(t.transitions[i].done);
  EXPECT_THROW(rollout(policy, env, InputSequence(0, 1, {0.0}), 0, 1), Error);
}

TEST(Rollout, GridworldIsReproducibleForAFixedSeed) {
  envs::GridWorldEnv env;
  auto z = envs::gen_gridworld_inputs(50, 11, 3);
  auto policy = zero_gridworld_policy();
  Trajectory a = rollout(policy, env, z, 50, 99);
  Trajectory b = rollout(policy, env, z, 50, 99);
  Trajectory c = rollout(policy, env, z, 50, 100);
  EXPECT_TRUE(same_trajectory(a, b));
  EXPECT_FALSE(same_trajectory(a, c));
}

TEST(Rollout, ReplayIsBitIdenticalWithRandomParameters) {
  envs::GridWorldEnv env(envs::GridWorldConfig{50, 0.1, true});
  Rng rng(5);
  auto policy = nn::MlpParams::glorot(nn::two_hidden(2, 2), rng);
  auto z = envs::gen_gridworld_inputs(50, 4, 0, 0.8);
  EXPECT_TRUE(same_trajectory(rollout(policy, env, z, 50, 7), rollout(policy, env, z, 50, 7)));
}

TEST(Rollout, UniformPolicyPicksEachActionHalfTheTime) {
  envs::GridWorldEnv env;
  auto policy = zero_gridworld_policy();
  const int n = 10000;
  int plus = 0;
  for (int i = 0; i < n; ++i) {
    auto z = envs::gen_gridworld_inputs(1, derive_seed(1, {static_cast<std::uint64_t>(i)}), i);
    Trajectory t = rollout(policy, env, z, 1, derive_seed(2, {static_cast<std::uint64_t>(i)}));
    plus += envs::gridworld_action_value(t.transitions[0].action) == 1;
    EXPECT_DOUBLE_EQ(t.transitions[0].log_prob, -std::log(2.0));
  }
  // binomial standard error sqrt(0.25 / n) = 0.005; 3 sigma
  EXPECT_NEAR(static_cast<double>(plus) / n, 0.5, 0.015);
}

TEST(Rollout, ShortInputSequenceIsInputExhausted) {
  envs::GridWorldEnv env;
  auto policy = zero_gridworld_policy();
  try {
    rollout(policy, env, envs::gen_gridworld_inputs(10, 1, 0), 50, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("input exhausted"), std::string::npos);
  }
}

TEST(Rollout, NonFiniteLogitsAreNumericalFailure) {
  envs::GridWorldEnv env;
  nn::MlpConfig cfg{{1, 1, 2}};
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg.param_count()));
  flat[1] = 1e308;  // hidden bias
  flat[2] = 1e308;  // output weights
  flat[3] = 1e308;
  nn::MlpParams policy(cfg, flat);
  try {
    rollout(policy, env, envs::gen_gridworld_inputs(50, 1, 0), 50, 1);
    FAIL();
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("numerical failure"), std::string::npos);
  }
}

TEST(Rollout, PolicyShapeMustMatchEnvironment) {
  envs::GridWorldEnv env;
  nn::MlpParams policy(nn::two_hidden(3, 2));
  EXPECT_THROW(rollout(policy, env, envs::gen_gridworld_inputs(50, 1, 0), 50, 1), Error);
}

TEST(Rollout, LogProbsAreNonPositiveAndStepsIncrease) {
  envs::GridWorldEnv env;
  Rng rng(3);
  auto policy = nn::MlpParams::glorot(nn::two_hidden(1, 2), rng);
  Trajectory t = rollout(policy, env, envs::gen_gridworld_inputs(50, 2, 0), 50, 3);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_LE(t.transitions[i].log_prob, 0.0);
    EXPECT_EQ(t.transitions[i].t, static_cast<int>(i));
  }
}

TEST(Observation, CaseOneTrailingEntryIsTheCurrentInput) {
  envs::GridWorldEnv env(envs::GridWorldConfig{20, 0.1, true});
  auto z = envs::gen_gridworld_inputs(20, 8, 0, 0.7);
  Trajectory t = rollout(zero_gridworld_policy(true), env, z, 20, 1);
  for (const auto& tr : t.transitions) {
    EXPECT_TRUE(tr.observation.includes_input);
    EXPECT_EQ(tr.observation.vector.back(), z.scalar(static_cast<std::size_t>(tr.t)));
  }
}

TEST(DiscountedReturns, Examples) {
  EXPECT_EQ(discounted_returns(std::vector<double>{0, 0, 0}, 0.9), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(discounted_returns(std::vector<double>{1, 2, 3}, 1.0), (std::vector<double>{6, 5, 3}));
  EXPECT_EQ(discounted_returns(std::vector<double>{1, 1}, 0.0), (std::vector<double>{1, 1}));
}

TEST(DiscountedReturns, RejectsGammaOutsideTheUnitInterval) {
  EXPECT_THROW(discounted_returns(std::vector<double>{1.0}, 1.5), Error);
  EXPECT_THROW(discounted_returns(std::vector<double>{1.0}, -0.1), Error);
  EXPECT_THROW(discounted_returns(std::vector<double>{std::nan("")}, 0.5), Error);
}

TEST(DiscountedReturns, RecursionHoldsExactly) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(1 + trial * 7);
    for (auto& x : r) x = standard_normal(rng) * 100.0;
    const double gamma = uniform01(rng);
    auto g = discounted_returns(r, gamma);
    ASSERT_EQ(g.size(), r.size());
    EXPECT_EQ(g.back(), r.back());
    for (std::size_t t = 0; t + 1 < r.size(); ++t) EXPECT_EQ(g[t], r[t] + gamma * g[t + 1]);
  }
}

TEST(DiscountedReturns, MatchesForwardSummation) {
  std::vector<double> r{0.5, -1.0, 2.0, 0.25};
  const double gamma = 0.7;
  auto g = discounted_returns(r, gamma);
  for (std::size_t t = 0; t < r.size(); ++t) {
    double s = 0.0, d = 1.0;
    for (std::size_t u = t; u < r.size(); ++u, d *= gamma) s += d * r[u];
    EXPECT_NEAR(g[t], s, 1e-14);
  }
}

TEST(TrajectoryDump, RoundTripsAndKeepsFieldOrder) {
  envs::GridWorldEnv env;
  Rng rng(1);
  auto policy = nn::MlpParams::glorot(nn::two_hidden(1, 2), rng);
  Trajectory t = rollout(policy, env, envs::gen_gridworld_inputs(50, 1, 42), 50, 5);
  std::stringstream ss;
  write_trajectory(ss, t);
  std::string header, first;
  std::getline(ss, header);
  std::getline(ss, first);
  EXPECT_EQ(header.find("\"input_seq_id\":42"), 1u);
  const auto pos = [&](const char* key) { return first.find(key); };
  EXPECT_LT(pos("\"step\""), pos("\"observation\""));
  EXPECT_LT(pos("\"observation\""), pos("\"action\""));
  EXPECT_LT(pos("\"action\""), pos("\"log_prob\""));
  EXPECT_LT(pos("\"log_prob\""), pos("\"reward\""));
  EXPECT_LT(pos("\"reward\""), pos("\"done\""));

  std::stringstream again;
  write_trajectory(again, t);
  Trajectory back = read_trajectory(again);
  EXPECT_TRUE(same_trajectory(t, back));
}

TEST(Categorical, SamplesFollowTheDistribution) {
  Rng rng(9);
  Eigen::Vector3d p(0.2, 0.5, 0.3);
  std::array<int, 3> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sample_categorical(p, rng))]++;
  for (int i = 0; i < 3; ++i) {
    const double se = std::sqrt(p[i] * (1 - p[i]) / n);
    EXPECT_NEAR(counts[static_cast<std::size_t>(i)] / static_cast<double>(n), p[i], 4 * se);
  }
}

TEST(Seeds, DerivedStreamsDifferAndAreStable) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
  Rng rng(0);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform_open01(rng);
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
