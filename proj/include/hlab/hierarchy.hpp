#pragma once

// Inter-agent dependency analysis.
//
// The sensitivity of agent i to agent j is the norm of the block of
// d softmax(actor_i(o_i)) / d o_i restricted to the four slots describing
// agent j (position and velocity). Net dependency of agent i is how much the
// others depend on i minus how much i depends on them; the agent with the
// largest net dependency at a step is that step's leader.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlab/error.hpp"
#include "hlab/maddpg.hpp"
#include "hlab/mlp.hpp"
#include "hlab/world.hpp"

namespace hlab::hierarchy {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Entrywise p-norm used to collapse a 5x4 Jacobian block; p = 2 is the
/// Frobenius norm, p = infinity the largest absolute entry.
inline double block_norm(const MatrixXd& block, double p = 2.0) {
  require(p >= 1.0, ErrorKind::input, "block_norm: p must be >= 1");
  if (std::isinf(p)) return block.cwiseAbs().maxCoeff();
  if (p == 2.0) return block.norm();
  if (p == 1.0) return block.cwiseAbs().sum();
  return std::pow(block.cwiseAbs().array().pow(p).sum(), 1.0 / p);
}

/// Columns of `jacobian` that belong to teammate j inside observer's vector.
inline MatrixXd teammate_columns(const MatrixXd& jacobian, const world::ObservationLayout& layout, int observer,
                                 int j) {
  require(jacobian.cols() == layout.total_dim(), ErrorKind::incompatibility,
          "jacobian width does not match the observation layout");
  const auto cols = layout.teammate_block(observer, j);
  MatrixXd block(jacobian.rows(), 4);
  for (int k = 0; k < 4; ++k) block.col(k) = jacobian.col(cols[k]);
  return block;
}

/// |grad_ij|: sensitivity of agent i's relaxed action to agent j's state.
inline double pairwise_sensitivity(const nn::MlpParams& actor_i, const VectorXd& obs_i,
                                   const world::ObservationLayout& layout, int i, int j, double p = 2.0) {
  require(i != j, ErrorKind::input, "pairwise_sensitivity: i and j must differ");
  require(layout.teammate_slot(i, j).has_value(), ErrorKind::input,
          "layout: agent " + std::to_string(j + 1) + " is not observed by agent " + std::to_string(i + 1));
  require(obs_i.size() == layout.total_dim() && actor_i.input_dim() == layout.total_dim(),
          ErrorKind::incompatibility, "pairwise_sensitivity: observation does not match the layout");
  return block_norm(teammate_columns(nn::input_jacobian(actor_i, obs_i), layout, i, j), p);
}

struct SensitivityMatrix {
  int step_index = 0;
  MatrixXd entries;  // (i, j) = |grad_ij|, zero diagonal

  int size() const { return static_cast<int>(entries.rows()); }
};

/// D_i = sum_{j != i} (|grad_ji| - |grad_ij|).
inline VectorXd dependency_values(const SensitivityMatrix& m) {
  const int n = m.size();
  require(m.entries.cols() == n, ErrorKind::input, "sensitivity matrix must be square");
  VectorXd d = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i) d(i) += m.entries(j, i) - m.entries(i, j);
  return d;
}

inline constexpr double kTieTolerance = 1e-12;

struct HierarchyVerdict {
  bool emerged = false;        // false when every D_i is equal within tolerance
  int leader = -1;             // 0-based; lowest index among tied maxima
  std::vector<int> followers;  // every other agent, ascending
  bool tie = false;            // more than one agent attains the maximum
};

inline HierarchyVerdict identify_hierarchy(const VectorXd& d, double tol = kTieTolerance) {
  require(d.size() > 0, ErrorKind::input, "identify_hierarchy: empty dependency vector");
  HierarchyVerdict v;
  const double hi = d.maxCoeff();
  const double lo = d.minCoeff();
  if (hi - lo <= tol) return v;
  v.emerged = true;
  int top = 0;
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    if (hi - d(k) <= tol) {
      if (top++ == 0) v.leader = static_cast<int>(k);
    }
  }
  v.tie = top > 1;
  for (int k = 0; k < d.size(); ++k)
    if (k != v.leader) v.followers.push_back(k);
  return v;
}

// ---------------------------------------------------------------------------
// Traces

struct DependencyTrace {
  world::ScenarioId scenario_id = world::ScenarioId::A;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::vector<SensitivityMatrix> sensitivities;
  std::vector<VectorXd> dependencies;
  std::vector<int> leaders;  // per-step argmax of D, ties to lowest index
  std::vector<bool> ties;

  int length() const { return static_cast<int>(dependencies.size()); }
  int num_agents() const { return dependencies.empty() ? 0 : static_cast<int>(dependencies.front().size()); }
};

inline DependencyTrace analyze_rollout(const maddpg::Trajectory& trajectory, std::span<const nn::MlpParams> actors,
                                       const world::ObservationLayout& layout, double p = 2.0) {
  const int n = layout.num_agents;
  require(static_cast<int>(actors.size()) == n, ErrorKind::incompatibility,
          "analyze_rollout: actor count does not match the layout");
  for (const auto& a : actors)
    require(a.input_dim() == layout.total_dim() && a.output_dim() == world::kNumActions,
            ErrorKind::incompatibility, "analyze_rollout: actor does not match the observation layout");
  DependencyTrace trace;
  trace.scenario_id = trajectory.scenario_id;
  for (int t = 0; t < trajectory.length(); ++t) {
    const auto& obs = trajectory.joint_obs[t];
    require(static_cast<int>(obs.size()) == n, ErrorKind::incompatibility,
            "analyze_rollout: trajectory agent count does not match the layout");
    SensitivityMatrix m{t, MatrixXd::Zero(n, n)};
    for (int i = 0; i < n; ++i) {
      require(obs[i].size() == layout.total_dim(), ErrorKind::incompatibility,
              "analyze_rollout: observation does not match the layout");
      const MatrixXd jac = nn::input_jacobian(actors[i], obs[i]);
      for (int j = 0; j < n; ++j)
        if (j != i) m.entries(i, j) = block_norm(teammate_columns(jac, layout, i, j), p);
    }
    VectorXd d = dependency_values(m);
    const HierarchyVerdict v = identify_hierarchy(d);
    trace.leaders.push_back(v.emerged ? v.leader : 0);
    trace.ties.push_back(!v.emerged || v.tie);
    trace.sensitivities.push_back(std::move(m));
    trace.dependencies.push_back(std::move(d));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Phases

enum class Pattern { persistent_dominance, alternating_dominance };

inline const char* to_string(Pattern p) {
  return p == Pattern::persistent_dominance ? "persistent_dominance" : "alternating_dominance";
}

struct Segment {
  int start = 0;  // first step
  int end = 0;    // last step, inclusive
  int leader = 0;
  VectorXd mean_dependency;

  int length() const { return end - start + 1; }
};

struct HierarchyReport {
  std::vector<Segment> segments;
  Pattern pattern = Pattern::persistent_dominance;
  std::vector<int> tie_steps;
  int min_segment_length = 0;
};

inline constexpr int kDefaultMinSegment = 3;

/// Run-length segments of the per-step leader. Runs shorter than
/// `min_segment_length` are absorbed by the preceding segment (the following
/// one when the short run opens the trace) until every segment is long enough
/// or only one remains. 0 or 1 keeps the raw argmax runs.
inline std::vector<Segment> leader_segments(std::span<const int> leaders, int min_segment_length) {
  std::vector<Segment> runs;
  for (int t = 0; t < static_cast<int>(leaders.size()); ++t) {
    if (!runs.empty() && runs.back().leader == leaders[t]) {
      runs.back().end = t;
    } else {
      runs.push_back({t, t, leaders[t], {}});
    }
  }
  auto coalesce = [&runs] {
    std::vector<Segment> out;
    for (auto& r : runs) {
      if (!out.empty() && out.back().leader == r.leader) {
        out.back().end = r.end;
      } else {
        out.push_back(r);
      }
    }
    runs = std::move(out);
  };
  while (runs.size() > 1) {
    std::size_t k = 0;
    while (k < runs.size() && runs[k].length() >= min_segment_length) ++k;
    if (k == runs.size()) break;
    if (k == 0) {
      runs[1].start = runs[0].start;
    } else {
      runs[k - 1].end = runs[k].end;
    }
    runs.erase(runs.begin() + static_cast<std::ptrdiff_t>(k));
    coalesce();
  }
  return runs;
}

inline HierarchyReport segment_phases(const DependencyTrace& trace, int min_segment_length = kDefaultMinSegment) {
  require(trace.length() > 0, ErrorKind::input, "segment_phases: empty trace");
  require(min_segment_length >= 0, ErrorKind::input, "segment_phases: min_segment_length must be nonnegative");
  HierarchyReport report;
  report.min_segment_length = min_segment_length;
  report.segments = leader_segments(trace.leaders, min_segment_length);
  for (auto& s : report.segments) {
    VectorXd acc = VectorXd::Zero(trace.num_agents());
    for (int t = s.start; t <= s.end; ++t) acc += trace.dependencies[t];
    s.mean_dependency = acc / static_cast<double>(s.length());
  }
  report.pattern =
      report.segments.size() == 1 ? Pattern::persistent_dominance : Pattern::alternating_dominance;
  for (int t = 0; t < trace.length(); ++t)
    if (trace.ties[t]) report.tie_steps.push_back(t);
  return report;
}

/// Leaders of successive segments, 1-based, joined by '-' (e.g. "1-2-1").
inline std::string leader_sequence(const HierarchyReport& r) {
  std::string s;
  for (const auto& seg : r.segments) {
    if (!s.empty()) s += '-';
    s += std::to_string(seg.leader + 1);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Export. Agent numbers in files are 1-based.

inline std::string trace_csv(const DependencyTrace& trace) {
  const int n = trace.num_agents();
  std::string out = "step";
  for (int i = 0; i < n; ++i) out += ",D_" + std::to_string(i + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) out += ",grad_" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
  out += '\n';
  char buf[32];
  auto num = [&buf](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (int t = 0; t < trace.length(); ++t) {
    out += std::to_string(t);
    for (int i = 0; i < n; ++i) out += "," + num(trace.dependencies[t](i));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) out += "," + num(trace.sensitivities[t].entries(i, j));
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const HierarchyReport& r) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : r.segments) {
    std::vector<double> mean(s.mean_dependency.data(), s.mean_dependency.data() + s.mean_dependency.size());
    segs.push_back({{"start", s.start}, {"end", s.end}, {"leader", s.leader + 1}, {"mean_dependency", mean}});
  }
  return {{"segments", segs},
          {"pattern", to_string(r.pattern)},
          {"leader_sequence", leader_sequence(r)},
          {"min_segment_length", r.min_segment_length},
          {"tie_steps", r.tie_steps},
          {"has_ties", !r.tie_steps.empty()}};
}

}  // namespace hlab::hierarchy
