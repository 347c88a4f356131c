#pragma once

// Plain-text artifacts: trajectory logs, reward logs and small file helpers.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlab/error.hpp"
#include "hlab/maddpg.hpp"
#include "hlab/world.hpp"

namespace hlab::io {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << content;
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::configuration, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(1) + "\n"); }

/// Shortest form that parses back to the identical double.
inline std::string format_double(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

struct CsvTable {
  std::map<std::string, std::string> meta;  // key=value pairs from leading '#' lines
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return static_cast<int>(k);
    return -1;
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream words(line.substr(1));
      std::string w;
      while (words >> w) {
        const auto eq = w.find('=');
        if (eq != std::string::npos) t.meta[w.substr(0, eq)] = w.substr(eq + 1);
      }
      continue;
    }
    if (t.header.empty()) {
      t.header = split(line);
    } else {
      t.rows.push_back(split(line));
      require(t.rows.back().size() == t.header.size(), ErrorKind::validation,
              "csv row " + std::to_string(t.rows.size()) + " has " + std::to_string(t.rows.back().size()) +
                  " fields, header has " + std::to_string(t.header.size()));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Reward log: episode,total_reward,smoothed_reward_w100

inline std::string reward_log_csv(const std::vector<maddpg::EpisodeRecord>& episodes) {
  std::vector<double> r;
  for (const auto& e : episodes) r.push_back(e.total_reward);
  const auto smooth = maddpg::moving_average(r, maddpg::kSmoothingWindow);
  std::string out = "episode,total_reward,smoothed_reward_w100\n";
  for (std::size_t k = 0; k < episodes.size(); ++k)
    out += std::to_string(episodes[k].episode) + "," + format_double(r[k]) + "," + format_double(smooth[k]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory log
//
// A '#' line carries scenario=<id> force=<f> max_steps=<m>. Row k is the
// world after k steps: row 0 is the reset state with zero rewards and
// action -1; row k >= 1 holds the rewards of step k and the action indices
// (0 left, 1 right, 2 down, 3 up, 4 stay) that produced it.

inline std::vector<std::string> trajectory_header(int n) {
  std::vector<std::string> h{"step"};
  for (int i = 1; i <= n; ++i) {
    const std::string a = "agent" + std::to_string(i);
    h.insert(h.end(), {a + "_x", a + "_y", a + "_vx", a + "_vy"});
  }
  h.insert(h.end(), {"box_x", "box_y"});
  for (int i = 1; i <= n; ++i) h.push_back("reward_" + std::to_string(i));
  h.push_back("done");
  for (int i = 1; i <= n; ++i) h.push_back("action_" + std::to_string(i));
  return h;
}

inline std::string trajectory_csv(const maddpg::Trajectory& t, const world::ScenarioConfig& config) {
  const int n = config.num_agents();
  std::string out = "# scenario=" + world::to_string(config.scenario_id) +
                    " force=" + format_double(config.physics.force) +
                    " max_steps=" + std::to_string(config.max_steps) + "\n";
  const auto header = trajectory_header(n);
  for (std::size_t k = 0; k < header.size(); ++k) out += (k ? "," : "") + header[k];
  out += '\n';
  for (std::size_t k = 0; k < t.states.size(); ++k) {
    const world::WorldState& s = t.states[k];
    out += std::to_string(k);
    for (int i = 0; i < n; ++i) {
      out += "," + format_double(s.agent_pos[i].x()) + "," + format_double(s.agent_pos[i].y());
      out += "," + format_double(s.agent_vel[i].x()) + "," + format_double(s.agent_vel[i].y());
    }
    out += "," + format_double(s.box_pos.x()) + "," + format_double(s.box_pos.y());
    for (int i = 0; i < n; ++i) out += "," + format_double(k == 0 ? 0.0 : t.rewards[k - 1][i]);
    out += s.done ? ",1" : ",0";
    for (int i = 0; i < n; ++i)
      out += "," + std::to_string(k == 0 ? -1 : maddpg::argmax(t.executed_actions[k - 1][i]));
    out += '\n';
  }
  return out;
}

struct ReplayReport {
  bool ok = false;
  int steps = 0;                 // transitions re-simulated
  int first_divergent_step = -1;
  std::string detail;
};

inline double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    require(used == s.size(), ErrorKind::validation, "bad number '" + s + "' in " + what);
    return x;
  } catch (const std::logic_error&) {
    fail(ErrorKind::validation, "bad number '" + s + "' in " + what);
  }
}

/// Re-simulates the logged actions from the reset state and compares every
/// logged position, velocity, reward and done flag within `tol`.
/// Schema or geometry problems raise incompatibility errors; numeric
/// disagreement is reported through ReplayReport.
inline ReplayReport replay_trajectory(const std::string& csv_text,
                                      std::optional<world::ScenarioId> expected = std::nullopt,
                                      double tol = 1e-9) {
  CsvTable table = parse_csv(csv_text);
  require(table.meta.count("scenario") == 1, ErrorKind::incompatibility, "trajectory: missing scenario metadata");
  const world::ScenarioId id = world::parse_scenario(table.meta.at("scenario"));
  if (expected && *expected != id)
    fail(ErrorKind::incompatibility, "trajectory was recorded in scenario " + world::to_string(id) +
                                         ", expected " + world::to_string(*expected));
  world::ScenarioConfig config = world::build_scenario(id);
  if (table.meta.count("force")) config.physics.force = parse_number(table.meta.at("force"), "metadata");
  if (table.meta.count("max_steps")) config.max_steps = static_cast<int>(parse_number(table.meta.at("max_steps"), "metadata"));
  const int n = config.num_agents();
  require(table.header == trajectory_header(n), ErrorKind::incompatibility,
          "trajectory: columns do not match the " + std::to_string(n) + "-agent schema");
  require(!table.rows.empty(), ErrorKind::incompatibility, "trajectory: no rows");

  auto num = [&](std::size_t row, const std::string& col) {
    return parse_number(table.rows[row][static_cast<std::size_t>(table.column(col))], col);
  };
  auto mismatch = [&](int step, const std::string& what) {
    ReplayReport r;
    r.first_divergent_step = step;
    r.steps = step;
    r.detail = "step " + std::to_string(step) + ": " + what;
    return r;
  };
  auto compare = [&](std::size_t row, const world::WorldState& s, const std::vector<double>* rewards)
      -> std::optional<std::string> {
    auto close = [&](double a, double b) { return std::abs(a - b) <= tol; };
    for (int i = 0; i < n; ++i) {
      const std::string a = "agent" + std::to_string(i + 1);
      if (!close(num(row, a + "_x"), s.agent_pos[i].x()) || !close(num(row, a + "_y"), s.agent_pos[i].y()))
        return a + " position differs";
      if (!close(num(row, a + "_vx"), s.agent_vel[i].x()) || !close(num(row, a + "_vy"), s.agent_vel[i].y()))
        return a + " velocity differs";
      const double logged_r = num(row, "reward_" + std::to_string(i + 1));
      if (!close(logged_r, rewards ? (*rewards)[i] : 0.0)) return "reward_" + std::to_string(i + 1) + " differs";
    }
    if (!close(num(row, "box_x"), s.box_pos.x()) || !close(num(row, "box_y"), s.box_pos.y()))
      return std::string("box position differs");
    if ((num(row, "done") != 0.0) != s.done) return std::string("done flag differs");
    return std::nullopt;
  };

  world::WorldState s = world::reset(config);
  if (auto diff = compare(0, s, nullptr))
    fail(ErrorKind::incompatibility, "trajectory: initial state does not match scenario " +
                                         world::to_string(id) + " geometry (" + *diff + ")");
  for (std::size_t row = 1; row < table.rows.size(); ++row) {
    const int k = static_cast<int>(row);
    if (s.done) return mismatch(k, "log continues after the episode ended");
    std::vector<world::OneHot> actions;
    for (int i = 0; i < n; ++i) {
      const double a = num(row, "action_" + std::to_string(i + 1));
      if (a != std::floor(a) || a < 0 || a >= world::kNumActions)
        return mismatch(k, "invalid action for agent " + std::to_string(i + 1));
      actions.push_back(world::one_hot(static_cast<int>(a)));
    }
    world::StepOutcome out = world::step(s, actions, config);
    if (auto diff = compare(row, out.next_state, &out.rewards)) return mismatch(k, *diff);
    s = std::move(out.next_state);
  }
  ReplayReport ok;
  ok.ok = true;
  ok.steps = static_cast<int>(table.rows.size()) - 1;
  ok.detail = "replayed " + std::to_string(ok.steps) + " steps";
  return ok;
}

}  // namespace hlab::io
