#pragma once

// Experiment orchestration behind the `hlab` command line: training runs,
// dependency analysis of trained teams, seed sweeps and trajectory replay.
//
// Run directory layout:
//   <out>/<run_id>/manifest.json
//                  rewards.csv
//                  checkpoints/episode_<NNNNNN>.json
//                  trajectory.csv  trace.csv  report.json
//                  charts/{rewards,dependency,sensitivity}.svg

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hlab/error.hpp"
#include "hlab/hierarchy.hpp"
#include "hlab/io.hpp"
#include "hlab/maddpg.hpp"
#include "hlab/svg.hpp"
#include "hlab/world.hpp"

namespace hlab::experiment {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string run_id_for(world::ScenarioId id, std::uint64_t seed) {
  std::string s = world::to_string(id);
  s[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(s[0])));
  return s + "_seed" + std::to_string(seed);
}

inline std::string checkpoint_name(int episode) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "episode_%06d.json", episode);
  return buf;
}

struct RunManifest {
  std::string run_id;
  world::ScenarioId scenario_id = world::ScenarioId::A;
  std::uint64_t seed = 0;
  maddpg::TrainConfig config;
  nlohmann::json artifacts = nlohmann::json::object();  // name -> path relative to the run directory
  nlohmann::json summary = nlohmann::json::object();
  std::string started_at;
  std::string finished_at;
  std::string tool_version = kToolVersion;
};

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},
          {"scenario_id", world::to_string(m.scenario_id)},
          {"seed", m.seed},
          {"config", maddpg::to_json(m.config)},
          {"artifacts", m.artifacts},
          {"summary", m.summary},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"tool_version", m.tool_version}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.scenario_id = world::parse_scenario(j.at("scenario_id").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config = maddpg::merge_config(maddpg::TrainConfig{}, j.at("config"));
    m.artifacts = j.value("artifacts", nlohmann::json::object());
    m.summary = j.value("summary", nlohmann::json::object());
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.tool_version = j.value("tool_version", "");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::configuration, std::string("manifest: ") + e.what());
  }
}

/// Desk-scale overrides: shorter run, earlier learning start, smaller batches.
inline maddpg::TrainConfig desk_scale_config(std::uint64_t seed) {
  maddpg::TrainConfig c;
  c.max_episodes = 5000;
  c.learning_start_step = 10000;
  c.batch_size = 256;
  c.seed = seed;
  return c;
}

// ---------------------------------------------------------------------------
// Charts

inline std::string reward_chart(const std::vector<maddpg::EpisodeRecord>& episodes) {
  std::vector<double> raw;
  for (const auto& e : episodes) raw.push_back(e.total_reward);
  const auto smooth = maddpg::moving_average(raw, maddpg::kSmoothingWindow);
  std::vector<svg::Series> series{{"episode reward", raw, "#f4a6a6"}, {"moving average (100)", smooth, "#1f4e9c"}};
  return svg::line_chart("Total episode reward", "episode", "reward", series, svg::span_axes(series));
}

inline std::string dependency_chart(const hierarchy::DependencyTrace& trace, int steps) {
  std::vector<svg::Series> series;
  for (int i = 0; i < trace.num_agents(); ++i) {
    svg::Series s{"D_" + std::to_string(i + 1), {}, {}};
    for (const auto& d : trace.dependencies) s.values.push_back(d(i));
    series.push_back(std::move(s));
  }
  return svg::line_chart("Dependency per agent", "step", "dependency", series, svg::symmetric_axes(series, steps));
}

inline std::string sensitivity_chart(const hierarchy::DependencyTrace& trace, int steps) {
  std::vector<svg::Series> series;
  const int n = trace.num_agents();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      svg::Series s{"|grad_" + std::to_string(i + 1) + std::to_string(j + 1) + "|", {}, {}};
      for (const auto& m : trace.sensitivities) s.values.push_back(m.entries(i, j));
      series.push_back(std::move(s));
    }
  return svg::line_chart("Pairwise sensitivity", "step", "sensitivity", series, svg::positive_axes(series, steps));
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  RunManifest manifest;
  fs::path run_dir;
  maddpg::TrainResult result;
};

inline TrainOutcome cmd_train(world::ScenarioId scenario, const maddpg::TrainConfig& config, const fs::path& out_dir,
                              bool emit_svg = false, const maddpg::EpisodeSink& on_episode = {}) {
  maddpg::validate(config);
  TrainOutcome out;
  RunManifest& m = out.manifest;
  m.run_id = run_id_for(scenario, config.seed);
  m.scenario_id = scenario;
  m.seed = config.seed;
  m.config = config;
  m.started_at = utc_timestamp();
  out.run_dir = out_dir / m.run_id;
  fs::create_directories(out.run_dir / "checkpoints");

  nlohmann::json checkpoints = nlohmann::json::array();
  out.result = maddpg::train(
      scenario, config,
      [&](const maddpg::Checkpoint& c) {
        const std::string rel = "checkpoints/" + checkpoint_name(c.episode);
        io::write_json(out.run_dir / rel, maddpg::to_json(c));
        checkpoints.push_back(rel);
      },
      on_episode);

  io::write_file(out.run_dir / "rewards.csv", io::reward_log_csv(out.result.episodes));
  m.artifacts["rewards"] = "rewards.csv";
  m.artifacts["checkpoints"] = checkpoints;
  m.artifacts["final_checkpoint"] = checkpoints.back();
  if (emit_svg) {
    io::write_file(out.run_dir / "charts/rewards.svg", reward_chart(out.result.episodes));
    m.artifacts["reward_chart"] = "charts/rewards.svg";
  }
  const auto smooth = out.result.smoothed_rewards();
  int goals = 0;
  for (const auto& e : out.result.episodes) goals += e.reached_goal ? 1 : 0;
  m.summary = {{"episodes", out.result.episodes.size()},
               {"env_steps", out.result.env_steps},
               {"update_rounds", out.result.update_rounds},
               {"goal_episodes", goals},
               {"final_smoothed_reward", smooth.back()}};
  m.finished_at = utc_timestamp();
  io::write_json(out.run_dir / "manifest.json", to_json(m));
  return out;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  fs::path checkpoint;
  std::optional<world::ScenarioId> scenario;  // defaults to the checkpoint's scenario
  fs::path out_dir;
  bool emit_svg = false;
  int rollouts = 1;             // rollout 0 is greedy; the rest are epsilon-perturbed
  double eval_epsilon = 0.05;
  int min_segment_length = hierarchy::kDefaultMinSegment;
  double norm_p = 2.0;
};

struct AnalysisOutcome {
  maddpg::Trajectory trajectory;
  hierarchy::DependencyTrace trace;
  hierarchy::HierarchyReport report;
  int goal_rollouts = 0;
};

inline AnalysisOutcome analyze_checkpoint(const maddpg::Checkpoint& checkpoint, world::ScenarioId scenario,
                                          const AnalyzeOptions& opt, const std::string& checkpoint_ref) {
  require(checkpoint.scenario_id == scenario, ErrorKind::incompatibility,
          "checkpoint was trained on scenario " + world::to_string(checkpoint.scenario_id) + ", not " +
              world::to_string(scenario));
  require(opt.rollouts >= 1, ErrorKind::configuration, "analyze: rollouts must be >= 1");
  const world::ScenarioConfig config = maddpg::scenario_for(checkpoint);
  const world::ObservationLayout layout(config);
  const auto actors = checkpoint.team.actors();

  AnalysisOutcome out;
  out.trajectory = maddpg::rollout(actors, config);
  out.trace = hierarchy::analyze_rollout(out.trajectory, actors, layout, opt.norm_p);
  out.trace.seed = checkpoint.seed;
  out.trace.checkpoint = checkpoint_ref;
  out.report = hierarchy::segment_phases(out.trace, opt.min_segment_length);
  out.goal_rollouts = out.trajectory.reached_goal() ? 1 : 0;

  const fs::path& dir = opt.out_dir;
  io::write_file(dir / "trajectory.csv", io::trajectory_csv(out.trajectory, config));
  io::write_file(dir / "trace.csv", hierarchy::trace_csv(out.trace));

  nlohmann::json extra = nlohmann::json::array();
  for (int k = 1; k < opt.rollouts; ++k) {
    const maddpg::Trajectory t =
        maddpg::rollout(actors, config, maddpg::ActMode::explore, opt.eval_epsilon, static_cast<std::uint64_t>(k));
    hierarchy::DependencyTrace tr = hierarchy::analyze_rollout(t, actors, layout, opt.norm_p);
    const hierarchy::HierarchyReport rep = hierarchy::segment_phases(tr, opt.min_segment_length);
    out.goal_rollouts += t.reached_goal() ? 1 : 0;
    const std::string name = "trace_" + std::to_string(k) + ".csv";
    io::write_file(dir / name, hierarchy::trace_csv(tr));
    extra.push_back({{"rollout", k},
                     {"trace", name},
                     {"reached_goal", t.reached_goal()},
                     {"length", t.length()},
                     {"pattern", hierarchy::to_string(rep.pattern)},
                     {"leader_sequence", hierarchy::leader_sequence(rep)}});
  }

  nlohmann::json report = hierarchy::to_json(out.report);
  report["scenario_id"] = world::to_string(scenario);
  report["seed"] = checkpoint.seed;
  report["checkpoint"] = checkpoint_ref;
  report["episode"] = checkpoint.episode;
  report["steps"] = out.trajectory.length();
  report["reached_goal"] = out.trajectory.reached_goal();
  report["total_reward"] = out.trajectory.total_reward();
  report["rollouts"] = opt.rollouts;
  report["goal_rollouts"] = out.goal_rollouts;
  report["eval_epsilon"] = opt.eval_epsilon;
  report["extra_rollouts"] = extra;
  io::write_json(dir / "report.json", report);

  if (opt.emit_svg) {
    io::write_file(dir / "charts/dependency.svg", dependency_chart(out.trace, config.max_steps));
    io::write_file(dir / "charts/sensitivity.svg", sensitivity_chart(out.trace, config.max_steps));
  }

  // Register outputs with a manifest living in the same directory, if any.
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    RunManifest m = manifest_from_json(io::read_json(manifest_path));
    m.artifacts["trajectory"] = "trajectory.csv";
    m.artifacts["trace"] = "trace.csv";
    m.artifacts["report"] = "report.json";
    if (opt.emit_svg) {
      m.artifacts["dependency_chart"] = "charts/dependency.svg";
      m.artifacts["sensitivity_chart"] = "charts/sensitivity.svg";
    }
    m.summary["pattern"] = hierarchy::to_string(out.report.pattern);
    m.summary["leader_sequence"] = hierarchy::leader_sequence(out.report);
    m.summary["greedy_reached_goal"] = out.trajectory.reached_goal();
    io::write_json(manifest_path, to_json(m));
  }
  return out;
}

inline AnalysisOutcome cmd_analyze(const AnalyzeOptions& opt) {
  const maddpg::Checkpoint checkpoint = maddpg::checkpoint_from_json(io::read_json(opt.checkpoint));
  return analyze_checkpoint(checkpoint, opt.scenario.value_or(checkpoint.scenario_id), opt, opt.checkpoint.string());
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string pattern;
  std::string leader_sequence;
  double final_smoothed_reward = 0.0;
  bool success = false;  // greedy rollout of the final checkpoint reaches the goal
  std::string error;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  fs::path summary_path;

  int failures() const {
    int f = 0;
    for (const auto& r : rows) f += r.ok ? 0 : 1;
    return f;
  }
};

/// Worker count: HLAB_THREADS when set (>= 1), else hardware concurrency.
inline int sweep_threads(std::size_t jobs) {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HLAB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return std::max(1, std::min<int>(n, static_cast<int>(jobs)));
}

inline std::string sweep_summary_csv(const std::vector<SweepRow>& rows) {
  std::string out = "seed,pattern,leader_sequence,final_smoothed_reward,success,status\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + r.pattern + "," + r.leader_sequence + "," +
           (r.ok ? io::format_double(r.final_smoothed_reward) : "") + "," + (r.success ? "1" : "0") + "," +
           (r.ok ? "ok" : "failed") + "\n";
  }
  return out;
}

inline SweepResult cmd_sweep(world::ScenarioId scenario, const std::vector<std::uint64_t>& seeds,
                             const maddpg::TrainConfig& base, const fs::path& out_dir, bool emit_svg = false) {
  require(!seeds.empty(), ErrorKind::usage, "sweep: seed list is empty");
  maddpg::validate(base);
  SweepResult result;
  result.rows.resize(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < seeds.size(); k = next++) {
      SweepRow& row = result.rows[k];
      row.seed = seeds[k];
      try {
        maddpg::TrainConfig c = base;
        c.seed = seeds[k];
        const TrainOutcome t = cmd_train(scenario, c, out_dir, emit_svg);
        AnalyzeOptions opt;
        opt.out_dir = t.run_dir;
        opt.emit_svg = emit_svg;
        const AnalysisOutcome a = analyze_checkpoint(t.result.final_checkpoint, scenario, opt,
                                                     t.manifest.artifacts["final_checkpoint"].get<std::string>());
        row.pattern = hierarchy::to_string(a.report.pattern);
        row.leader_sequence = hierarchy::leader_sequence(a.report);
        row.final_smoothed_reward = t.result.smoothed_rewards().back();
        row.success = a.trajectory.reached_goal();
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };
  const int threads = sweep_threads(seeds.size());
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(out_dir);
  result.summary_path = out_dir / "summary.csv";
  io::write_file(result.summary_path, sweep_summary_csv(result.rows));
  return result;
}

// ---------------------------------------------------------------------------
// replay

inline io::ReplayReport cmd_replay(const fs::path& trajectory_csv,
                                   std::optional<world::ScenarioId> scenario = std::nullopt) {
  return io::replay_trajectory(io::read_file(trajectory_csv), scenario);
}

}  // namespace hlab::experiment
