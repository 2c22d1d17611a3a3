#pragma once

// Experiment configuration and the training run driver behind `idb train`.
//
// A config is a JSON document layered over built-in defaults. Unknown keys
// and type mismatches are errors that name the offending field. A run
// directory holds:
//   config.json      resolved config snapshot
//   metrics.jsonl    one record per iteration (deterministic)
//   timing.jsonl     wall-clock time per iteration
//   eval.jsonl       held-out evaluations
//   checkpoints/     policy_<it>.idbp and baseline_<it>.idbb
//   manifest.json    written atomically when the run ends

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idb/analysis/evaluation.hpp"
#include "idb/nn/checkpoint.hpp"
#include "idb/trainer.hpp"

namespace idb {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr const char* kCodeVersion = "0.1.0";

struct ExperimentConfig {
  std::string env = "gridworld";
  envs::PresetOptions env_options;
  std::string baseline = "state";
  long iterations = 100;
  std::uint64_t seed = 0;
  long eval_every = 0;        // 0: evaluate at the end only
  int test_sequences = 100;
  int eval_episodes = 1;
  long checkpoint_every = 0;  // 0: final checkpoint only
  std::string output_dir;     // empty: $IDB_OUTPUT_ROOT, else ./runs
  std::string run_name;       // empty: <env>-<baseline>-s<seed>
  TrainConfig train;

  void validate() const {
    envs::make_preset(env, env_options);
    parse_baseline_kind(baseline);
    if (baseline == "oracle") throw Error("baseline: the oracle cannot be trained");
    if (iterations < 0) throw Error("iterations must be >= 0");
    if (eval_every < 0 || checkpoint_every < 0) throw Error("eval_every and checkpoint_every must be >= 0");
    if (test_sequences < 1 || eval_episodes < 1) throw Error("test_sequences and eval_episodes must be >= 1");
    train.validate();
  }
};

inline ojson experiment_defaults() {
  ExperimentConfig d;
  const TrainConfig& t = d.train;
  const envs::PresetOptions& e = d.env_options;
  ojson j;
  j["env"] = d.env;
  j["env_options"] = {{"episode_length", e.episode_length},
                      {"reward_mode", e.reward_mode},
                      {"observe_input", e.observe_input},
                      {"input_persistence", e.input_persistence},
                      {"loop_trace", e.loop_trace}};
  j["baseline"] = d.baseline;
  j["iterations"] = d.iterations;
  j["seed"] = d.seed;
  j["eval_every"] = d.eval_every;
  j["test_sequences"] = d.test_sequences;
  j["eval_episodes"] = d.eval_episodes;
  j["checkpoint_every"] = d.checkpoint_every;
  j["output_dir"] = d.output_dir;
  j["run_name"] = d.run_name;
  ojson tr;
  tr["gamma"] = t.gamma;
  tr["num_workers"] = t.num_workers;
  tr["lr"] = t.lr;
  tr["value_lr"] = t.value_lr;
  tr["value_steps"] = t.value_steps;
  tr["entropy_start"] = t.entropy_start;
  tr["entropy_end"] = t.entropy_end;
  tr["entropy_horizon"] = t.entropy_horizon;
  tr["max_grad_norm"] = t.max_grad_norm;
  tr["reward_scale"] = nullptr;  // null: the preset's suggested scale
  tr["time_scale"] = nullptr;    // null: 1 / episode length
  tr["time_harmonics"] = t.time_harmonics;
  tr["hidden1"] = t.hidden1;
  tr["hidden2"] = t.hidden2;
  tr["num_train_sequences"] = t.num_train_sequences;
  tr["sequence_mode"] = t.sequence_mode;
  tr["meta"] = {{"inner_lr", t.meta.inner_lr},
                {"inner_steps", t.meta.inner_steps},
                {"outer_lr", t.meta.outer_lr},
                {"rollouts_per_sequence", t.meta.rollouts_per_sequence},
                {"inner_clip", t.meta.inner_clip}};
  tr["threads"] = t.threads;
  j["train"] = tr;
  return j;
}

namespace detail {

inline bool same_kind(const ojson& base, const ojson& v) {
  if (base.is_null()) return v.is_null() || v.is_number();
  if (base.is_number_integer()) return v.is_number_integer();
  if (base.is_number()) return v.is_number();
  if (base.is_boolean()) return v.is_boolean();
  if (base.is_string()) return v.is_string();
  return base.type() == v.type();
}

inline const char* kind_label(const ojson& base) {
  if (base.is_null() || base.is_number_float()) return "a number";
  if (base.is_number_integer()) return "an integer";
  if (base.is_boolean()) return "a boolean";
  if (base.is_string()) return "a string";
  return "an object";
}

}  // namespace detail

/// Overlays `patch` on `base`; every key in `patch` must exist in `base`
/// with a compatible type.
inline void merge_checked(ojson& base, const ojson& patch, const std::string& path = "") {
  if (!patch.is_object()) throw Error("config" + (path.empty() ? "" : " field '" + path + "'") + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw Error("unknown config key '" + key + "'");
    ojson& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      if (!detail::same_kind(slot, it.value()))
        throw Error("config field '" + key + "' must be " + detail::kind_label(slot));
      if (slot.is_number_unsigned() && !it.value().is_number_unsigned() && it.value().get<long long>() < 0)
        throw Error("config field '" + key + "' must be non-negative");
      slot = it.value();
    }
  }
}

/// `a.b.c=value`; the value is parsed as JSON when possible, otherwise it is
/// taken as a string.
inline ojson override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  ojson value = ojson::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) throw Error("override key '" + key + "' has an empty component");
    parts.push_back(p);
  }
  ojson patch = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    ojson wrap = ojson::object();
    wrap[*it] = std::move(patch);
    patch = std::move(wrap);
  }
  return patch;
}

inline ExperimentConfig experiment_from_json(const ojson& user, const std::vector<std::string>& overrides = {}) {
  ojson j = experiment_defaults();
  merge_checked(j, user);
  for (const auto& o : overrides) merge_checked(j, override_patch(o));

  ExperimentConfig c;
  c.env = j["env"].get<std::string>();
  const ojson& e = j["env_options"];
  c.env_options.episode_length = e["episode_length"].get<int>();
  c.env_options.reward_mode = e["reward_mode"].get<std::string>();
  c.env_options.observe_input = e["observe_input"].get<bool>();
  c.env_options.input_persistence = e["input_persistence"].get<double>();
  c.env_options.loop_trace = e["loop_trace"].get<bool>();
  c.baseline = j["baseline"].get<std::string>();
  c.iterations = j["iterations"].get<long>();
  c.seed = j["seed"].get<std::uint64_t>();
  c.eval_every = j["eval_every"].get<long>();
  c.test_sequences = j["test_sequences"].get<int>();
  c.eval_episodes = j["eval_episodes"].get<int>();
  c.checkpoint_every = j["checkpoint_every"].get<long>();
  c.output_dir = j["output_dir"].get<std::string>();
  c.run_name = j["run_name"].get<std::string>();

  const envs::EnvPreset preset = envs::make_preset(c.env, c.env_options);
  const ojson& t = j["train"];
  TrainConfig& tc = c.train;
  tc.gamma = t["gamma"].get<double>();
  tc.num_workers = t["num_workers"].get<int>();
  tc.lr = t["lr"].get<double>();
  tc.value_lr = t["value_lr"].get<double>();
  tc.value_steps = t["value_steps"].get<int>();
  tc.entropy_start = t["entropy_start"].get<double>();
  tc.entropy_end = t["entropy_end"].get<double>();
  tc.entropy_horizon = t["entropy_horizon"].get<int>();
  tc.max_grad_norm = t["max_grad_norm"].get<double>();
  tc.reward_scale = t["reward_scale"].is_null() ? preset.reward_scale : t["reward_scale"].get<double>();
  tc.time_scale = t["time_scale"].is_null() ? 1.0 / preset.max_steps : t["time_scale"].get<double>();
  tc.time_harmonics = t["time_harmonics"].get<int>();
  tc.hidden1 = t["hidden1"].get<int>();
  tc.hidden2 = t["hidden2"].get<int>();
  tc.num_train_sequences = t["num_train_sequences"].get<int>();
  tc.sequence_mode = t["sequence_mode"].get<std::string>();
  tc.meta.inner_lr = t["meta"]["inner_lr"].get<double>();
  tc.meta.inner_steps = t["meta"]["inner_steps"].get<int>();
  tc.meta.outer_lr = t["meta"]["outer_lr"].get<double>();
  tc.meta.rollouts_per_sequence = t["meta"]["rollouts_per_sequence"].get<int>();
  tc.meta.inner_clip = t["meta"]["inner_clip"].get<double>();
  tc.threads = t["threads"].get<int>();
  tc.seed = c.seed;
  c.validate();
  return c;
}

/// Fully resolved config; feeding it back to experiment_from_json reproduces
/// the same run.
inline ojson to_json(const ExperimentConfig& c) {
  ojson j = experiment_defaults();
  j["env"] = c.env;
  j["env_options"] = {{"episode_length", c.env_options.episode_length},
                      {"reward_mode", c.env_options.reward_mode},
                      {"observe_input", c.env_options.observe_input},
                      {"input_persistence", c.env_options.input_persistence},
                      {"loop_trace", c.env_options.loop_trace}};
  j["baseline"] = c.baseline;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["test_sequences"] = c.test_sequences;
  j["eval_episodes"] = c.eval_episodes;
  j["checkpoint_every"] = c.checkpoint_every;
  j["output_dir"] = c.output_dir;
  j["run_name"] = c.run_name;
  const TrainConfig& t = c.train;
  ojson& tr = j["train"];
  tr["gamma"] = t.gamma;
  tr["num_workers"] = t.num_workers;
  tr["lr"] = t.lr;
  tr["value_lr"] = t.value_lr;
  tr["value_steps"] = t.value_steps;
  tr["entropy_start"] = t.entropy_start;
  tr["entropy_end"] = t.entropy_end;
  tr["entropy_horizon"] = t.entropy_horizon;
  tr["max_grad_norm"] = t.max_grad_norm;
  tr["reward_scale"] = t.reward_scale;
  tr["time_scale"] = t.time_scale;
  tr["time_harmonics"] = t.time_harmonics;
  tr["hidden1"] = t.hidden1;
  tr["hidden2"] = t.hidden2;
  tr["num_train_sequences"] = t.num_train_sequences;
  tr["sequence_mode"] = t.sequence_mode;
  tr["meta"] = {{"inner_lr", t.meta.inner_lr},
                {"inner_steps", t.meta.inner_steps},
                {"outer_lr", t.meta.outer_lr},
                {"rollouts_per_sequence", t.meta.rollouts_per_sequence},
                {"inner_clip", t.meta.inner_clip}};
  tr["threads"] = t.threads;
  return j;
}

inline ojson read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  ojson j = ojson::parse(f, nullptr, false);
  if (j.is_discarded()) throw Error(path.string() + " is not valid JSON");
  return j;
}

/// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f << text;
    if (!f.flush()) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline fs::path default_output_root() {
  if (const char* env = std::getenv("IDB_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

inline fs::path run_directory(const ExperimentConfig& c) {
  const fs::path root = c.output_dir.empty() ? default_output_root() : fs::path(c.output_dir);
  const std::string name =
      c.run_name.empty() ? c.env + "-" + c.baseline + "-s" + std::to_string(c.seed) : c.run_name;
  return root / name;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_policy(const fs::path& path, const nn::MlpParams& policy) {
  std::ostringstream os(std::ios::binary);
  nn::write_params(os, policy, "policy");
  write_file_atomic(path, os.str());
}

inline nn::MlpParams load_policy(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  nn::TaggedParams p = nn::read_params(f);
  if (p.kind != "policy") throw Error(path.string() + " holds '" + p.kind + "' parameters, not a policy");
  return p.params;
}

inline bool has_parameters(const BaselineModel& m) {
  const BaselineKind k = kind_of(m);
  return k != BaselineKind::none && k != BaselineKind::oracle;
}

inline void save_baseline(const fs::path& path, const BaselineModel& model) {
  std::ostringstream os(std::ios::binary);
  write_baseline(os, model);
  write_file_atomic(path, os.str());
}

inline BaselineModel load_baseline(const fs::path& path, double value_lr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  return read_baseline(f, value_lr);
}

// ---------------------------------------------------------------------------
// Training run

struct EvalRecord {
  long iteration = 0;
  analysis::EvalReport report;
};

inline ojson to_json(const EvalRecord& e) {
  ojson j;
  j["iteration"] = e.iteration;
  j["test_mean_return"] = e.report.mean;
  j["test_std_return"] = e.report.std;
  j["episodes"] = e.report.episodes;
  return j;
}

struct RunResult {
  fs::path dir;
  ojson manifest;
  TrainerState state;
  std::vector<IterationMetrics> metrics;
  std::vector<EvalRecord> evals;
};

inline EvalRecord evaluate_on_test_set(const ExperimentConfig& c, const envs::EnvPreset& preset,
                                       const nn::MlpParams& policy, long iteration) {
  auto tests = envs::test_set(preset, c.seed, static_cast<std::size_t>(c.test_sequences));
  return {iteration, analysis::evaluate_policy(policy, preset, tests, c.eval_episodes,
                                               derive_seed(c.seed, {909}), false, c.train.threads)};
}

/// Trains per `c` into `dir` (created; must not already hold a manifest).
/// On failure the metrics written so far stay in place and the manifest
/// records status "failed" before the error propagates.
inline RunResult run_experiment(const ExperimentConfig& c, const fs::path& dir,
                                const std::function<void(const TrainerState&)>& on_iteration = {}) {
  c.validate();
  if (fs::exists(dir / "manifest.json")) throw Error("run directory " + dir.string() + " already holds a run");
  fs::create_directories(dir / "checkpoints");
  const std::string started = utc_timestamp();
  const ojson snapshot = to_json(c);
  write_file_atomic(dir / "config.json", snapshot.dump(2) + "\n");

  const envs::EnvPreset preset = envs::make_preset(c.env, c.env_options);
  const BaselineKind kind = parse_baseline_kind(c.baseline);
  RunResult res;
  res.dir = dir;
  ojson checkpoints = ojson::array();

  ojson manifest;
  manifest["status"] = "running";
  manifest["code_version"] = kCodeVersion;
  manifest["started_at"] = started;
  manifest["finished_at"] = nullptr;
  manifest["config"] = snapshot;
  manifest["baseline_kind"] = kind_name(kind);
  manifest["k"] = needs_grouping(kind) ? c.train.meta.rollouts_per_sequence : 1;
  manifest["inner_steps"] = c.train.meta.inner_steps;

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  std::ofstream timing(dir / "timing.jsonl", std::ios::trunc);
  std::ofstream evals(dir / "eval.jsonl", std::ios::trunc);
  if (!metrics || !timing || !evals) throw Error("cannot write to " + dir.string());

  auto checkpoint = [&](const TrainerState& st) {
    const std::string tag = std::to_string(st.iteration);
    ojson entry;
    entry["iteration"] = st.iteration;
    const fs::path p = fs::path("checkpoints") / ("policy_" + tag + ".idbp");
    save_policy(dir / p, st.policy);
    entry["policy"] = p.string();
    if (has_parameters(st.baseline)) {
      const fs::path b = fs::path("checkpoints") / ("baseline_" + tag + ".idbb");
      save_baseline(dir / b, st.baseline);
      entry["baseline"] = b.string();
    }
    checkpoints.push_back(entry);
  };
  auto evaluate = [&](const TrainerState& st) {
    res.evals.push_back(evaluate_on_test_set(c, preset, st.policy, st.iteration));
    evals << to_json(res.evals.back()).dump() << '\n' << std::flush;
  };

  try {
    res.state = init_trainer(c.train, preset, kind);
    const auto t0 = std::chrono::steady_clock::now();
    for (long it = 0; it < c.iterations; ++it) {
      res.metrics.push_back(a2c_iteration(c.train, preset, res.state));
      metrics << to_json(res.metrics.back()).dump() << '\n' << std::flush;
      ojson tm;
      tm["iteration"] = it;
      tm["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      timing << tm.dump() << '\n' << std::flush;
      const long done = res.state.iteration;
      if (on_iteration) on_iteration(res.state);
      if (c.checkpoint_every > 0 && done % c.checkpoint_every == 0 && done != c.iterations) checkpoint(res.state);
      if (c.eval_every > 0 && done % c.eval_every == 0 && done != c.iterations) evaluate(res.state);
    }
    checkpoint(res.state);
    evaluate(res.state);
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    manifest["finished_at"] = utc_timestamp();
    manifest["iterations_completed"] = res.state.iteration;
    manifest["checkpoints"] = checkpoints;
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
    throw;
  }

  ojson summary;
  summary["iterations_completed"] = res.state.iteration;
  if (!res.metrics.empty()) {
    summary["last_mean_return"] = res.metrics.back().mean_return;
    summary["last_grad_variance_trace"] = res.metrics.back().grad_variance_trace;
    summary["last_value_loss"] = res.metrics.back().value_loss;
  }
  summary["test_mean_return"] = res.evals.back().report.mean;
  summary["test_std_return"] = res.evals.back().report.std;
  manifest["status"] = "completed";
  manifest["finished_at"] = utc_timestamp();
  manifest["final_metrics"] = summary;
  manifest["checkpoints"] = checkpoints;
  manifest["metrics"] = "metrics.jsonl";
  manifest["eval"] = "eval.jsonl";
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  res.manifest = manifest;
  return res;
}

}  // namespace idb
