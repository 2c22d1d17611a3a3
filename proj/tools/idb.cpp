// idb: train, evaluate and check input-dependent baselines.
//
// Exit status: 0 ok, 1 failure (a check failed or the command hit an error
// at run time), 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "idb/analysis/suites.hpp"
#include "idb/analysis/variance_report.hpp"
#include "idb/experiment.hpp"

namespace {

using namespace idb;

struct UsageError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string env, baseline, out, name;
  long iters = -1;
  long long seed = -1;
  int threads = 0;
  std::vector<std::string> set;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg;
  try {
    ojson user = a.config.empty() ? ojson::object() : read_json_file(a.config);
    std::vector<std::string> ov;
    if (!a.env.empty()) ov.push_back("env=\"" + a.env + "\"");
    if (!a.baseline.empty()) ov.push_back("baseline=\"" + a.baseline + "\"");
    if (a.iters >= 0) ov.push_back("iterations=" + std::to_string(a.iters));
    if (a.seed >= 0) ov.push_back("seed=" + std::to_string(a.seed));
    if (!a.out.empty()) ov.push_back("output_dir=" + ojson(a.out).dump());
    if (!a.name.empty()) ov.push_back("run_name=" + ojson(a.name).dump());
    if (a.threads > 0) ov.push_back("train.threads=" + std::to_string(a.threads));
    ov.insert(ov.end(), a.set.begin(), a.set.end());
    cfg = experiment_from_json(user, ov);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = run_directory(cfg);
  RunResult r = run_experiment(cfg, dir);
  std::cout << "run " << dir.string() << '\n' << r.manifest["final_metrics"].dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, heuristic, env, heatmap;
  int sequences = 100;
  int episodes = 1;
  long long seed = 0;
  bool greedy = false;
  int threads = 1;
  int episode_length = 0;
  std::string reward_mode = "exact";
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.heuristic.empty()) throw UsageError("give exactly one of --checkpoint or --heuristic");
  envs::PresetOptions opt;
  opt.episode_length = a.episode_length;
  opt.reward_mode = a.reward_mode;
  const envs::EnvPreset preset = envs::make_preset(a.env, opt);
  auto tests = envs::test_set(preset, static_cast<std::uint64_t>(a.seed), static_cast<std::size_t>(a.sequences));
  const std::uint64_t eval_seed = derive_seed(static_cast<std::uint64_t>(a.seed), {909});
  ojson out;
  out["env"] = a.env;
  analysis::EvalReport rep;
  nn::MlpParams policy;
  if (!a.checkpoint.empty()) {
    policy = load_policy(a.checkpoint);
    auto env = preset.make_env();
    if (policy.config().input_dim() != env->observation_dim() || policy.config().output_dim() != env->num_actions())
      throw Error("checkpoint dimensions do not match environment '" + a.env + "'");
    rep = analysis::evaluate_policy(policy, preset, tests, a.episodes, eval_seed, a.greedy, a.threads);
    out["policy"] = a.checkpoint;
  } else if (a.heuristic == "shortest-queue") {
    if (a.env != "motivating2" && a.env != "loadbalance10") throw UsageError("shortest-queue needs a load-balancing env");
    rep = analysis::evaluate_with(preset, tests, a.episodes, eval_seed, analysis::shortest_queue_chooser(), a.threads);
    out["policy"] = a.heuristic;
  } else if (a.heuristic == "mpc") {
    if (a.env != "abr") throw UsageError("mpc needs the abr env");
    envs::AbrConfig ac;
    ac.num_chunks = preset.max_steps;
    ac.loop_trace = opt.loop_trace;
    rep = analysis::evaluate_with(preset, tests, a.episodes, eval_seed, analysis::mpc_chooser(ac), a.threads);
    out["policy"] = a.heuristic;
  } else {
    throw UsageError("unknown heuristic '" + a.heuristic + "'");
  }
  out["sequences"] = a.sequences;
  out["episodes"] = rep.episodes;
  out["mean_return"] = rep.mean;
  out["std_return"] = rep.std;
  if (!a.heatmap.empty()) {
    if (a.checkpoint.empty()) throw UsageError("--heatmap needs --checkpoint");
    const auto grid = analysis::default_queue_grid();
    Eigen::MatrixXd h = analysis::policy_heatmap(policy, grid);
    std::ofstream f(a.heatmap);
    if (!f) throw Error("cannot write " + a.heatmap);
    f << "q1\\q2";
    for (double g : grid) f << ',' << g;
    f << '\n';
    f.precision(10);
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      f << grid[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < h.cols(); ++j) f << ',' << h(i, j);
      f << '\n';
    }
    auto agree = analysis::shortest_queue_agreement(h, grid);
    out["heatmap"] = a.heatmap;
    out["shortest_queue_agreement"] = agree.fraction;
    out["agreement_points"] = agree.points;
  }
  std::cout << out.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// variance-report

struct VarianceArgs {
  std::string checkpoint, env, config;
  std::vector<std::string> baselines;
  std::size_t rollouts = 64;
  int fit_iterations = 400;
  int fit_steps = 10;
  int eval_batches = 8;
  long long seed = 0;
  std::vector<std::string> set;
  bool json = false;
};

int cmd_variance(const VarianceArgs& a) {
  ExperimentConfig cfg;
  std::vector<BaselineKind> kinds;
  try {
    ojson user = a.config.empty() ? ojson::object() : read_json_file(a.config);
    if (user.contains("baseline")) user.erase("baseline");
    // a stored run config keeps its own seed (it fixes the training sequences)
    std::vector<std::string> ov{"env=\"" + a.env + "\""};
    if (!user.contains("seed")) ov.push_back("seed=" + std::to_string(a.seed));
    ov.insert(ov.end(), a.set.begin(), a.set.end());
    cfg = experiment_from_json(user, ov);
    for (const auto& b : a.baselines) {
      std::stringstream ss(b);
      for (std::string k; std::getline(ss, k, ',');) kinds.push_back(parse_baseline_kind(k));
    }
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (kinds.empty()) throw UsageError("no baselines given");
  const envs::EnvPreset preset = envs::make_preset(cfg.env, cfg.env_options);
  nn::MlpParams policy = load_policy(a.checkpoint);
  analysis::VarianceProtocol proto;
  proto.rollouts = a.rollouts;
  proto.fit_iterations = a.fit_iterations;
  proto.fit_steps = a.fit_steps;
  proto.eval_batches = a.eval_batches;
  proto.seed = static_cast<std::uint64_t>(a.seed);
  auto rows = analysis::variance_report(policy, preset, cfg.train, kinds, proto);
  const double ref = rows.front().stats.trace_of_covariance;
  if (a.json) {
    for (const auto& r : rows) {
      ojson j;
      j["baseline"] = r.kind;
      j["trace_of_covariance"] = r.stats.trace_of_covariance;
      j["sample_count"] = r.stats.sample_count;
      j["mean_vector_norm"] = r.stats.mean_vector_norm;
      j["ratio_to_first"] = ref / r.stats.trace_of_covariance;
      j["final_value_loss"] = r.final_value_loss;
      j["batch_traces"] = r.batch_traces;
      std::cout << j.dump() << '\n';
    }
    return 0;
  }
  std::printf("%-10s %16s %8s %14s %12s\n", "baseline", "trace(cov)", "n", "|mean grad|", "first/this");
  for (const auto& r : rows)
    std::printf("%-10s %16.6g %8zu %14.6g %12.3f\n", r.kind.c_str(), r.stats.trace_of_covariance,
                r.stats.sample_count, r.stats.mean_vector_norm, ref / r.stats.trace_of_covariance);
  return 0;
}

// ---------------------------------------------------------------------------
// check

struct CheckArgs {
  std::string suite;
  long long seed = 0;
  std::vector<double> gammas;
  std::size_t trajectories = 1'000'000;
  std::size_t rollouts = 10'000;
  int threads = 1;
};

int cmd_check(const CheckArgs& a) {
  using namespace analysis;
  static const std::vector<std::string> suites{"gridworld", "lemma1", "trpo", "optimality", "bias", "gradcheck", "all"};
  if (std::find(suites.begin(), suites.end(), a.suite) == suites.end())
    throw UsageError("unknown suite '" + a.suite + "'");
  const auto seed = static_cast<std::uint64_t>(a.seed);
  const bool all = a.suite == "all";
  std::vector<CheckResult> results;
  auto run = [&](const std::string& name, auto&& f) {
    if (!all && a.suite != name) return;
    auto add = [&](const CheckResult& r) {
      std::printf("%s %s: %s (%.1fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
      std::fflush(stdout);
      results.push_back(r);
    };
    f(add);
  };
  run("gridworld", [&](auto add) {
    for (double g : a.gammas.empty() ? std::vector<double>{0.5, 0.9} : a.gammas)
      add(check_gridworld_gap(g, a.trajectories, seed, a.threads));
  });
  run("lemma1", [&](auto add) {
    for (const auto& r : check_lemma1(seed)) add(r);
  });
  run("trpo", [&](auto add) { add(check_trpo(seed)); });
  run("optimality", [&](auto add) { add(check_optimality(seed)); });
  run("bias", [&](auto add) {
    add(check_exact_invariance(seed));
    for (const char* env : {"gridworld", "motivating2"})
      for (BaselineKind k : {BaselineKind::state, BaselineKind::multi, BaselineKind::meta})
        add(check_bias_mc(env, k, a.rollouts, 50, seed, a.threads));
  });
  run("gradcheck", [&](auto add) {
    for (const auto& r : check_numerics(seed)) add(r);
  });
  const bool ok = all_passed(results);
  std::printf("%s: %zu checks, %s\n", a.suite.c_str(), results.size(), ok ? "all passed" : "FAILED");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gen-inputs

struct GenArgs {
  std::string env, out, split = "train";
  int count = 10;
  long long seed = 0;
  int episode_length = 0;
  bool force = false;
};

// One step per line: z for the grid walker, interarrival,size for load
// balancing, time_seconds,bytes_per_second for ABR.
void write_inputs_csv(std::ostream& os, const InputSequence& s) {
  os.precision(17);
  for (std::size_t t = 0; t < s.length(); ++t) {
    auto v = s.at(t);
    for (std::size_t d = 0; d < v.size(); ++d) os << (d ? "," : "") << v[d];
    os << '\n';
  }
}

int cmd_gen_inputs(const GenArgs& a) {
  if (a.split != "train" && a.split != "test") throw UsageError("--split must be train or test");
  if (a.count < 1) throw UsageError("--count must be >= 1");
  envs::PresetOptions opt;
  opt.episode_length = a.episode_length;
  const envs::EnvPreset preset = envs::make_preset(a.env, opt);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  std::vector<InputSequence> seqs;
  for (int i = 0; i < a.count; ++i)
    seqs.push_back(a.split == "train" ? envs::train_inputs(preset, static_cast<std::uint64_t>(a.seed), static_cast<std::size_t>(i))
                                      : envs::test_inputs(preset, static_cast<std::uint64_t>(a.seed), static_cast<std::size_t>(i)));
  auto path_of = [&](const InputSequence& s) { return dir / (a.env + "_" + std::to_string(s.id()) + ".csv"); };
  if (!a.force)
    for (const auto& s : seqs)
      if (fs::exists(path_of(s))) throw Error(path_of(s).string() + " exists; use --force to overwrite");
  for (const auto& s : seqs) {
    std::ostringstream os;
    write_inputs_csv(os, s);
    write_file_atomic(path_of(s), os.str());
  }
  std::cout << "wrote " << seqs.size() << " sequences to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Input-dependent baselines for policy gradients"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a policy and write a run directory");
  train->add_option("config", ta.config, "JSON experiment config")->check(CLI::ExistingFile);
  train->add_option("--env", ta.env, "Environment preset");
  train->add_option("--baseline", ta.baseline, "none | state | multi | meta");
  train->add_option("--iters", ta.iters, "Training iterations");
  train->add_option("--seed", ta.seed, "Master seed")->check(CLI::NonNegativeNumber);
  train->add_option("--out", ta.out, "Output root (default $IDB_OUTPUT_ROOT or ./runs)");
  train->add_option("--name", ta.name, "Run directory name");
  train->add_option("--threads", ta.threads, "Worker threads");
  train->add_option("--set", ta.set, "Override, e.g. train.lr=3e-4");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a policy checkpoint or a heuristic on test sequences");
  eval->add_option("--checkpoint", ea.checkpoint, "Policy checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--heuristic", ea.heuristic, "shortest-queue | mpc");
  eval->add_option("--env", ea.env, "Environment preset")->required();
  eval->add_option("--sequences", ea.sequences, "Number of test sequences")->check(CLI::PositiveNumber);
  eval->add_option("--episodes", ea.episodes, "Episodes per sequence")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ea.seed, "Master seed of the test split")->check(CLI::NonNegativeNumber);
  eval->add_flag("--greedy", ea.greedy, "Take the most likely action");
  eval->add_option("--heatmap", ea.heatmap, "Write the two-server decision heatmap CSV here");
  eval->add_option("--threads", ea.threads, "Worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--episode-length", ea.episode_length, "Override the preset episode length");
  eval->add_option("--reward-mode", ea.reward_mode, "exact | sampled");

  VarianceArgs va;
  auto* var = app.add_subcommand("variance-report", "Compare gradient variance across baselines under a frozen policy");
  var->add_option("--checkpoint", va.checkpoint, "Policy checkpoint")->required()->check(CLI::ExistingFile);
  var->add_option("--env", va.env, "Environment preset")->required();
  var->add_option("--baselines", va.baselines, "Comma-separated kinds, e.g. state,multi")->required();
  var->add_option("--rollouts", va.rollouts, "Rollouts per measurement batch");
  var->add_option("--eval-batches", va.eval_batches, "Measurement batches averaged");
  var->add_option("--fit-steps", va.fit_steps, "Optimizer steps per fitting batch");
  var->add_option("--fit-iterations", va.fit_iterations, "Baseline fitting batches");
  var->add_option("--seed", va.seed, "Master seed")->check(CLI::NonNegativeNumber);
  var->add_option("--config", va.config, "Experiment config supplying training settings")->check(CLI::ExistingFile);
  var->add_option("--set", va.set, "Config override");
  var->add_flag("--json", va.json, "One JSON record per row");

  CheckArgs ca;
  auto* check = app.add_subcommand("check", "Run verification suites");
  check->add_option("suite", ca.suite, "gridworld | lemma1 | trpo | optimality | bias | gradcheck | all")->required();
  check->add_option("--seed", ca.seed, "Seed")->check(CLI::NonNegativeNumber);
  check->add_option("--gamma", ca.gammas, "Discount(s) for the gridworld suite");
  check->add_option("--trajectories", ca.trajectories, "Gridworld Monte Carlo trajectories");
  check->add_option("--rollouts", ca.rollouts, "Rollouts for Monte Carlo bias checks");
  check->add_option("--threads", ca.threads, "Worker threads")->check(CLI::PositiveNumber);

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-inputs", "Write input sequences as CSV files");
  gen->add_option("--env", ga.env, "Environment preset")->required();
  gen->add_option("--count", ga.count, "Number of sequences");
  gen->add_option("--seed", ga.seed, "Master seed")->check(CLI::NonNegativeNumber);
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--split", ga.split, "train | test");
  gen->add_option("--episode-length", ga.episode_length, "Override the preset length");
  gen->add_flag("--force", ga.force, "Overwrite existing files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*var) return cmd_variance(va);
    if (*check) return cmd_check(ca);
    if (*gen) return cmd_gen_inputs(ga);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
