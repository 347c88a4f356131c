#pragma once

// Command line front end: hlab train|analyze|sweep|replay.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hlab/error.hpp"
#include "hlab/experiment.hpp"

namespace hlab::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIncompatible = 3,
  kDiverged = 4,
  kValidation = 5,
  kPartialFailure = 6,
  kIo = 7,
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::configuration:
    case ErrorKind::input:
    case ErrorKind::usage: return kUsage;
    case ErrorKind::incompatibility: return kIncompatible;
    case ErrorKind::diverged: return kDiverged;
    case ErrorKind::validation: return kValidation;
    case ErrorKind::io: return kIo;
  }
  return kInternal;
}

/// One command line flag per TrainConfig field, collected as text and
/// merged over the base configuration only when given.
struct ConfigFlags {
  struct Entry {
    std::string names;  // CLI11 name list
    std::string key;    // TrainConfig JSON key
    bool integer;
    std::optional<std::string> value;
  };
  std::vector<Entry> entries{
      {"--max-episode-length", "max_episode_length", true, {}},
      {"--episodes,--max-episodes", "max_episodes", true, {}},
      {"--learning-start,--learning-start-step", "learning_start_step", true, {}},
      {"--learning-frequency", "learning_frequency", true, {}},
      {"--batch-size", "batch_size", true, {}},
      {"--gamma", "gamma", false, {}},
      {"--tau", "tau", false, {}},
      {"--lr-actor", "lr_actor", false, {}},
      {"--lr-critic", "lr_critic", false, {}},
      {"--max-grad-norm", "max_grad_norm", false, {}},
      {"--logit-penalty", "logit_penalty", false, {}},
      {"--memory-size", "memory_size", true, {}},
      {"--hidden1", "hidden1", true, {}},
      {"--hidden2", "hidden2", true, {}},
      {"--epsilon-start", "epsilon_start", false, {}},
      {"--epsilon-end", "epsilon_end", false, {}},
      {"--epsilon-decay-fraction", "epsilon_decay_fraction", false, {}},
      {"--checkpoint-every", "checkpoint_every", true, {}},
      {"--action-force", "action_force", false, {}},
  };
  std::optional<std::string> config_path;
  std::optional<std::string> scenario;
  bool desk = false;

  void attach(CLI::App& app) {
    for (auto& e : entries) app.add_option(e.names, e.value, "override " + e.key);
    app.add_option("--config", config_path, "JSON config or run manifest; explicit flags take precedence");
    app.add_option("--scenario", scenario, "scenario a|b|c (default a)");
    app.add_flag("--desk", desk, "start from the desk-scale configuration (5000 episodes, learning start 10000, batch 256)");
  }

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& e : entries) {
      if (!e.value) continue;
      std::size_t used = 0;
      try {
        if (e.integer) {
          j[e.key] = std::stoll(*e.value, &used);
        } else {
          j[e.key] = std::stod(*e.value, &used);
        }
      } catch (const std::logic_error&) {
        used = 0;
      }
      require(used == e.value->size() && used > 0, ErrorKind::usage,
              "bad value '" + *e.value + "' for " + e.key + (e.integer ? " (expected an integer)" : ""));
    }
    return j;
  }

  struct Resolved {
    world::ScenarioId scenario = world::ScenarioId::A;
    maddpg::TrainConfig config;
  };

  /// Precedence: explicit flags > --config file > --desk > defaults.
  Resolved resolve(std::optional<std::uint64_t> seed) const {
    Resolved r;
    if (desk) r.config = experiment::desk_scale_config(0);
    if (config_path) {
      nlohmann::json j = io::read_json(*config_path);
      require(j.is_object(), ErrorKind::configuration, *config_path + ": expected a JSON object");
      if (j.contains("run_id") && j.contains("config")) {
        const experiment::RunManifest m = experiment::manifest_from_json(j);
        r.config = m.config;
        r.scenario = m.scenario_id;
      } else {
        for (const char* key : {"scenario", "scenario_id"}) {
          if (j.contains(key)) {
            r.scenario = world::parse_scenario(j.at(key).get<std::string>());
            j.erase(key);
          }
        }
        r.config = maddpg::merge_config(r.config, j);
      }
    }
    if (scenario) r.scenario = world::parse_scenario(*scenario);
    if (seed) r.config.seed = *seed;
    r.config = maddpg::merge_config(r.config, overrides());
    return r;
  }
};

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : io::split(text, ',')) {
    std::size_t used = 0;
    std::uint64_t s = 0;
    try {
      s = std::stoull(part, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    require(used == part.size() && used > 0, ErrorKind::usage, "bad seed '" + part + "' in --seeds");
    seeds.push_back(s);
  }
  require(!seeds.empty(), ErrorKind::usage, "--seeds is empty");
  return seeds;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-agent box pushing with MADDPG and dependency-hierarchy analysis", "hlab"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a team and write checkpoints, reward log and manifest");
  ConfigFlags train_flags;
  train_flags.attach(*train);
  std::optional<std::uint64_t> train_seed;
  std::string train_out = "runs";
  bool train_svg = false, quiet = false;
  train->add_option("--seed", train_seed, "random seed (default 0)");
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--svg", train_svg, "also write the reward chart");
  train->add_flag("--quiet", quiet, "no progress output");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "greedy rollout of a checkpoint plus dependency analysis");
  std::string checkpoint;
  std::optional<std::string> analyze_scenario, analyze_out;
  experiment::AnalyzeOptions aopt;
  analyze->add_option("checkpoint,--checkpoint", checkpoint, "checkpoint JSON")->required();
  analyze->add_option("--scenario", analyze_scenario, "scenario a|b|c (must match the checkpoint)");
  analyze->add_option("--out", analyze_out, "output directory (default: the checkpoint's run directory)");
  analyze->add_flag("--svg", aopt.emit_svg, "also write dependency and sensitivity charts");
  analyze->add_option("--rollouts", aopt.rollouts, "rollouts; the first is greedy, the rest epsilon-perturbed")
      ->check(CLI::PositiveNumber);
  analyze->add_option("--eval-epsilon", aopt.eval_epsilon, "exploration rate of the extra rollouts")
      ->check(CLI::Range(0.0, 1.0));
  analyze->add_option("--min-segment", aopt.min_segment_length, "shortest leader run kept as its own segment")
      ->check(CLI::PositiveNumber);
  analyze->add_option("--norm", aopt.norm_p, "entrywise p-norm of each Jacobian block (default 2, Frobenius)")
      ->check(CLI::Range(1.0, 1e300));

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train and analyze several seeds");
  ConfigFlags sweep_flags;
  sweep_flags.attach(*sweep);
  std::string seeds_text = "5,10,15,20,25,30";
  std::string sweep_out = "runs";
  bool sweep_svg = false;
  sweep->add_option("--seeds", seeds_text, "comma-separated seed list");
  sweep->add_option("--out", sweep_out, "output directory");
  sweep->add_flag("--svg", sweep_svg, "also write charts");

  // replay
  auto* replay = app.add_subcommand("replay", "re-simulate a trajectory log and compare");
  std::string trajectory;
  std::optional<std::string> replay_scenario;
  replay->add_option("trajectory,--trajectory", trajectory, "trajectory CSV")->required();
  replay->add_option("--scenario", replay_scenario, "expected scenario a|b|c");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) {
      const auto r = train_flags.resolve(train_seed);
      const auto progress = [&](const maddpg::EpisodeRecord& e) {
        if (!quiet && e.episode % 500 == 0)
          err << "episode " << e.episode << " reward " << e.total_reward << (e.reached_goal ? " goal" : "") << "\n";
      };
      const auto t = experiment::cmd_train(r.scenario, r.config, train_out, train_svg, progress);
      out << "run " << t.manifest.run_id << " -> " << t.run_dir.string() << "\n"
          << "final smoothed reward " << t.manifest.summary["final_smoothed_reward"].get<double>() << "\n";
      return kOk;
    }
    if (analyze->parsed()) {
      aopt.checkpoint = checkpoint;
      if (analyze_scenario) aopt.scenario = world::parse_scenario(*analyze_scenario);
      if (analyze_out) {
        aopt.out_dir = *analyze_out;
      } else {
        const fs::path parent = fs::path(checkpoint).parent_path();
        aopt.out_dir = parent.filename() == "checkpoints" ? parent.parent_path() : parent;
      }
      const auto a = experiment::cmd_analyze(aopt);
      out << "pattern " << hierarchy::to_string(a.report.pattern) << ", leaders "
          << hierarchy::leader_sequence(a.report) << ", goal " << (a.trajectory.reached_goal() ? "reached" : "missed")
          << ", " << a.goal_rollouts << "/" << aopt.rollouts << " rollouts reached the goal\n"
          << "wrote " << (aopt.out_dir / "report.json").string() << "\n";
      return kOk;
    }
    if (sweep->parsed()) {
      const auto r = sweep_flags.resolve(std::nullopt);
      const auto seeds = parse_seed_list(seeds_text);
      const auto s = experiment::cmd_sweep(r.scenario, seeds, r.config, sweep_out, sweep_svg);
      for (const auto& row : s.rows) {
        out << "seed " << row.seed << ": ";
        if (row.ok) {
          out << row.pattern << " " << row.leader_sequence << " reward " << row.final_smoothed_reward
              << (row.success ? " goal" : "") << "\n";
        } else {
          out << "FAILED " << row.error << "\n";
        }
      }
      out << "summary " << s.summary_path.string() << "\n";
      return s.failures() > 0 ? kPartialFailure : kOk;
    }
    if (replay->parsed()) {
      std::optional<world::ScenarioId> expected;
      if (replay_scenario) expected = world::parse_scenario(*replay_scenario);
      const auto rep = experiment::cmd_replay(trajectory, expected);
      if (rep.ok) {
        out << "ok: " << rep.detail << "\n";
        return kOk;
      }
      err << "mismatch at step " << rep.first_divergent_step << ": " << rep.detail << "\n";
      return kValidation;
    }
  } catch (const Error& e) {
    err << "hlab: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "hlab: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}

}  // namespace hlab::cli
