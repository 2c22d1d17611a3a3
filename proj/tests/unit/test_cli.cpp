#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "idb/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(IDB_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream f(p);
  for (std::string l; std::getline(f, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("idb_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string out() const { return "--out " + dir.string(); }
  fs::path dir;
};

}  // namespace

TEST_F(CliTest, TrainWritesOneRecordPerIterationAndOneCheckpoint) {
  CliRun r = run_cli("train --env gridworld --baseline state --iters 10 --name a --set test_sequences=5 " + out());
  ASSERT_EQ(r.status, 0) << r.out;
  const fs::path run = dir / "a";
  auto recs = lines(run / "metrics.jsonl");
  ASSERT_EQ(recs.size(), 10u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    json j = json::parse(recs[i]);
    EXPECT_EQ(j["iteration"].get<long>(), static_cast<long>(i));
    for (const char* k : {"mean_return", "entropy_coef", "grad_variance_trace", "baseline_kind"})
      EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(lines(run / "timing.jsonl").size(), 10u);
  json m = json::parse(slurp(run / "manifest.json"));
  EXPECT_EQ(m["status"], "completed");
  ASSERT_EQ(m["checkpoints"].size(), 1u);
  EXPECT_EQ(m["checkpoints"][0]["iteration"], 10);
  for (const auto& c : m["checkpoints"])
    for (const char* k : {"policy", "baseline"}) EXPECT_TRUE(fs::exists(run / c[k].get<std::string>()));
  EXPECT_TRUE(fs::exists(run / "config.json"));
  EXPECT_EQ(m["code_version"], idb::kCodeVersion);
  EXPECT_TRUE(m["started_at"].is_string());
  EXPECT_TRUE(m["finished_at"].is_string());
  EXPECT_EQ(m["final_metrics"]["iterations_completed"], 10);
}

TEST_F(CliTest, MetaManifestRecordsGroupSizeAndInnerSteps) {
  CliRun r = run_cli("train --env motivating2 --baseline meta --iters 1 --name m --set test_sequences=2 "
                  "--set env_options.episode_length=40 " + out());
  ASSERT_EQ(r.status, 0) << r.out;
  json m = json::parse(slurp(dir / "m" / "manifest.json"));
  EXPECT_EQ(m["baseline_kind"], "meta");
  EXPECT_EQ(m["k"], 8);
  EXPECT_EQ(m["inner_steps"], 5);
}

TEST_F(CliTest, RerunReproducesMetricsBitwise) {
  const std::string args = "train --env gridworld --baseline meta --iters 5 --set test_sequences=3 " + out();
  ASSERT_EQ(run_cli(args + " --name r1").status, 0);
  ASSERT_EQ(run_cli(args + " --name r2 --threads 3").status, 0);
  EXPECT_EQ(slurp(dir / "r1" / "metrics.jsonl"), slurp(dir / "r2" / "metrics.jsonl"));
  EXPECT_EQ(slurp(dir / "r1" / "eval.jsonl"), slurp(dir / "r2" / "eval.jsonl"));
  EXPECT_EQ(slurp(dir / "r1" / "checkpoints" / "policy_5.idbp"), slurp(dir / "r2" / "checkpoints" / "policy_5.idbp"));
}

TEST_F(CliTest, StoredConfigReproducesRun) {
  ASSERT_EQ(run_cli("train --env gridworld --baseline multi --iters 4 --name first --set test_sequences=2 " + out()).status, 0);
  json cfg = json::parse(slurp(dir / "first" / "config.json"));
  cfg["run_name"] = "second";
  std::ofstream(dir / "cfg.json") << cfg.dump();
  ASSERT_EQ(run_cli("train " + (dir / "cfg.json").string()).status, 0);
  EXPECT_EQ(slurp(dir / "first" / "metrics.jsonl"), slurp(dir / "second" / "metrics.jsonl"));
}

TEST_F(CliTest, OutputRootFromEnvironment) {
  const std::string cmd = "IDB_OUTPUT_ROOT=" + dir.string() + " " + std::string(IDB_CLI_PATH) +
                          " train --iters 1 --name viaenv --set test_sequences=1 > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "viaenv" / "manifest.json"));
}

TEST_F(CliTest, ConfigErrorsNameTheField) {
  CliRun r = run_cli("train --set train.lrr=1 " + out());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("train.lrr"), std::string::npos) << r.out;
  r = run_cli("train --set train.num_workers=1.5 " + out());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("train.num_workers"), std::string::npos) << r.out;
  r = run_cli("train --set train.gamma=0 " + out());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("gamma"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir / "gridworld-state-s0"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").status, 2);
  EXPECT_EQ(run_cli("frobnicate").status, 2);
  EXPECT_EQ(run_cli("check nosuchsuite").status, 2);
  EXPECT_EQ(run_cli("train --iters notanumber").status, 2);
}

TEST_F(CliTest, GenInputsWritesStableIds) {
  ASSERT_EQ(run_cli("gen-inputs --env gridworld --count 10 --seed 3 --out " + (dir / "a").string()).status, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 10u);
  for (int i = 0; i < 10; ++i) {
    const fs::path f = dir / "a" / ("gridworld_" + std::to_string(i) + ".csv");
    ASSERT_TRUE(fs::exists(f)) << f;
    EXPECT_EQ(lines(f).size(), 50u);
  }
  ASSERT_EQ(run_cli("gen-inputs --env gridworld --count 10 --seed 3 --out " + (dir / "b").string()).status, 0);
  for (int i = 0; i < 10; ++i) {
    const std::string n = "gridworld_" + std::to_string(i) + ".csv";
    EXPECT_EQ(slurp(dir / "a" / n), slurp(dir / "b" / n));
  }
}

TEST_F(CliTest, GenInputsRefusesToOverwrite) {
  const std::string args = "gen-inputs --env abr --count 2 --out " + dir.string();
  ASSERT_EQ(run_cli(args).status, 0);
  std::ofstream(dir / "abr_0.csv") << "tampered\n";
  CliRun r = run_cli(args);
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(slurp(dir / "abr_0.csv"), "tampered\n");
  ASSERT_EQ(run_cli(args + " --force").status, 0);
  EXPECT_NE(slurp(dir / "abr_0.csv"), "tampered\n");
}

TEST_F(CliTest, LoadBalanceSequencesHave500Jobs) {
  ASSERT_EQ(run_cli("gen-inputs --env motivating2 --count 2 --out " + dir.string()).status, 0);
  auto rows = lines(dir / "motivating2_0.csv");
  ASSERT_EQ(rows.size(), 500u);
  double ia = 0.0, size = 0.0;
  char comma = 0;
  std::istringstream(rows[0]) >> ia >> comma >> size;
  EXPECT_EQ(comma, ',');
  EXPECT_GT(ia, 0.0);
  EXPECT_GE(size, 100.0);
}

TEST_F(CliTest, TestSplitIdsAreDisjointFromTraining) {
  ASSERT_EQ(run_cli("gen-inputs --env gridworld --count 2 --split test --out " + dir.string()).status, 0);
  EXPECT_TRUE(fs::exists(dir / "gridworld_1000000.csv"));
  EXPECT_TRUE(fs::exists(dir / "gridworld_1000001.csv"));
  EXPECT_FALSE(fs::exists(dir / "gridworld_0.csv"));
}

TEST_F(CliTest, CheckGradcheckPasses) {
  CliRun r = run_cli("check gradcheck");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST_F(CliTest, CheckGridworldReportsGap) {
  CliRun r = run_cli("check gridworld --gamma 0.9 --trajectories 20000");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("6.9252"), std::string::npos) << r.out;
}

TEST_F(CliTest, EvalAndVarianceReportOnCheckpoint) {
  ASSERT_EQ(run_cli("train --env motivating2 --baseline state --iters 2 --name lb --set test_sequences=2 "
                    "--set env_options.episode_length=50 " + out()).status, 0);
  const std::string ckpt = (dir / "lb" / "checkpoints" / "policy_2.idbp").string();
  CliRun r = run_cli("eval --env motivating2 --episode-length 50 --sequences 3 --checkpoint " + ckpt +
                  " --heatmap " + (dir / "heat.csv").string());
  ASSERT_EQ(r.status, 0) << r.out;
  json j = json::parse(r.out);
  EXPECT_EQ(j["episodes"], 3);
  EXPECT_TRUE(j.contains("shortest_queue_agreement"));
  EXPECT_EQ(lines(dir / "heat.csv").size(), 22u);

  r = run_cli("eval --env gridworld --checkpoint " + ckpt);
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("dimensions"), std::string::npos) << r.out;

  const std::string vr = "variance-report --env motivating2 --set env_options.episode_length=50 --rollouts 16 "
                         "--fit-iterations 3 --json --checkpoint " + ckpt;
  r = run_cli(vr + " --baselines state,state,none");
  ASSERT_EQ(r.status, 0) << r.out;
  std::istringstream ss(r.out);
  std::string a, b;
  std::getline(ss, a);
  std::getline(ss, b);
  EXPECT_EQ(json::parse(a)["trace_of_covariance"], json::parse(b)["trace_of_covariance"]);

  r = run_cli("variance-report --env gridworld --baselines state --checkpoint " + ckpt);
  EXPECT_EQ(r.status, 1);
}

TEST_F(CliTest, EvalHeuristics) {
  CliRun r = run_cli("eval --env motivating2 --episode-length 50 --sequences 2 --heuristic shortest-queue");
  ASSERT_EQ(r.status, 0) << r.out;
  r = run_cli("eval --env abr --episode-length 20 --sequences 2 --heuristic mpc");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(run_cli("eval --env abr --sequences 2 --heuristic psychic").status, 2);
}
