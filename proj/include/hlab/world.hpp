#pragma once

// Box-pushing particle world: three agents push a disc-shaped box past fixed
// obstacles into a target region. Bodies are discs; contacts are soft
// penalty forces; integration is semi-implicit Euler with linear damping.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlab/error.hpp"

namespace hlab::world {

using Vec2 = Eigen::Vector2d;

enum class ScenarioId { A, B, C };

inline char to_char(ScenarioId id) {
  switch (id) {
    case ScenarioId::A: return 'A';
    case ScenarioId::B: return 'B';
    case ScenarioId::C: return 'C';
  }
  return '?';
}

inline std::string to_string(ScenarioId id) { return std::string(1, to_char(id)); }

/// Accepts "a"/"A", "b"/"B", "c"/"C".
inline ScenarioId parse_scenario(const std::string& s) {
  if (s == "a" || s == "A") return ScenarioId::A;
  if (s == "b" || s == "B") return ScenarioId::B;
  if (s == "c" || s == "C") return ScenarioId::C;
  fail(ErrorKind::configuration, "unknown scenario '" + s + "' (expected a, b or c)");
}

struct Disc {
  Vec2 pos;
  double radius;
};

struct Physics {
  double dt = 0.1;
  double damping = 0.25;
  double stiffness = 100.0;      // contact force per unit penetration
  double contact_margin = 1e-3;  // width of the softplus ramp
  double force = 1.0;            // magnitude of an action force
  double agent_mass = 1.0;
  double box_mass = 1.0;
};

struct ScenarioConfig {
  ScenarioId scenario_id = ScenarioId::A;
  std::vector<Vec2> agent_starts;
  double agent_radius = 0.05;
  Vec2 box_start = Vec2::Zero();
  double box_radius = 0.075;
  std::vector<Disc> obstacles;
  Disc target{Vec2::Zero(), 0.075};
  double world_bound = 1.0;
  int max_steps = 50;
  Physics physics;
  /// Goal holds when dist(box, target) < goal_threshold; box + target radius by default.
  double goal_threshold = 0.15;

  int num_agents() const { return static_cast<int>(agent_starts.size()); }
};

inline bool inside_arena(const Vec2& p, double bound) {
  return std::abs(p.x()) < bound && std::abs(p.y()) < bound;
}

inline void validate(const ScenarioConfig& c) {
  auto check = [](bool ok, const std::string& msg) {
    require(ok, ErrorKind::configuration, "scenario: " + msg);
  };
  check(c.num_agents() >= 2, "need at least two agents");
  check(c.world_bound > 0.0, "world_bound must be positive");
  check(c.agent_radius > 0.0 && c.box_radius > 0.0 && c.target.radius > 0.0,
        "radii must be positive");
  check(c.max_steps > 0, "max_steps must be positive");
  check(c.physics.dt > 0.0 && c.physics.agent_mass > 0.0 && c.physics.box_mass > 0.0,
        "dt and masses must be positive");
  check(c.physics.damping >= 0.0 && c.physics.damping < 1.0, "damping must lie in [0, 1)");
  check(c.physics.stiffness >= 0.0 && c.physics.contact_margin > 0.0 && c.physics.force >= 0.0,
        "contact parameters must be nonnegative");
  check(c.goal_threshold > 0.0, "goal_threshold must be positive");
  for (const auto& a : c.agent_starts)
    check(inside_arena(a, c.world_bound), "agent start outside the arena");
  check(inside_arena(c.box_start, c.world_bound), "box start outside the arena");
  check(inside_arena(c.target.pos, c.world_bound), "target outside the arena");
  for (const auto& o : c.obstacles) {
    check(o.radius > 0.0, "obstacle radius must be positive");
    check((o.pos - c.box_start).norm() >= o.radius + c.box_radius, "obstacle overlaps box start");
  }
}

/// The three box-pushing layouts. Starts, radii and targets are fixed; only the
/// target and obstacle set change between scenarios.
inline ScenarioConfig build_scenario(ScenarioId id) {
  ScenarioConfig c;
  c.scenario_id = id;
  c.agent_starts = {Vec2(0.0, -0.75), Vec2(0.5, -0.75), Vec2(-0.5, -0.75)};
  c.agent_radius = 0.05;
  c.box_start = Vec2(0.0, -0.5);
  c.box_radius = 0.075;
  switch (id) {
    case ScenarioId::A:
      c.obstacles = {{Vec2(-0.3, 0.0), 0.2}, {Vec2(0.3, 0.0), 0.2}};
      c.target = {Vec2(-0.9, 0.9), 0.075};
      break;
    case ScenarioId::B:
      c.obstacles = {{Vec2(-0.3, 0.0), 0.2}, {Vec2(0.3, 0.0), 0.2}};
      c.target = {Vec2(0.9, 0.9), 0.075};
      break;
    case ScenarioId::C:
      c.obstacles = {{Vec2(0.0, 0.0), 0.2}};
      c.target = {Vec2(0.0, 0.9), 0.075};
      break;
  }
  c.goal_threshold = c.box_radius + c.target.radius;
  validate(c);
  return c;
}

inline ScenarioConfig build_scenario(const std::string& id) {
  return build_scenario(parse_scenario(id));
}

enum class DoneReason { none, goal, timeout };

struct WorldState {
  int step_index = 0;
  std::vector<Vec2> agent_pos;
  std::vector<Vec2> agent_vel;
  Vec2 box_pos = Vec2::Zero();
  Vec2 box_vel = Vec2::Zero();
  bool done = false;
  DoneReason done_reason = DoneReason::none;

  bool operator==(const WorldState&) const = default;
};

/// Every body at its start position at rest. The layout has no random
/// component, so `seed` only tags the episode; equal inputs give equal states.
inline WorldState reset(const ScenarioConfig& config, std::uint64_t /*seed*/ = 0) {
  WorldState s;
  s.agent_pos = config.agent_starts;
  s.agent_vel.assign(config.agent_starts.size(), Vec2::Zero());
  s.box_pos = config.box_start;
  return s;
}

// ---------------------------------------------------------------------------
// Actions

inline constexpr int kNumActions = 5;

enum class Move { left = 0, right = 1, down = 2, up = 3, stay = 4 };

using OneHot = Eigen::Matrix<double, kNumActions, 1>;

inline OneHot one_hot(Move m) {
  OneHot v = OneHot::Zero();
  v(static_cast<int>(m)) = 1.0;
  return v;
}

inline OneHot one_hot(int index) {
  require(index >= 0 && index < kNumActions, ErrorKind::input, "action index out of range");
  return one_hot(static_cast<Move>(index));
}

inline Move decode_action(std::span<const double> action) {
  require(action.size() == kNumActions, ErrorKind::input, "action must have 5 entries");
  int hot = -1;
  for (int k = 0; k < kNumActions; ++k) {
    if (action[k] == 1.0) {
      require(hot < 0, ErrorKind::input, "action is not one-hot");
      hot = k;
    } else {
      require(action[k] == 0.0, ErrorKind::input, "action is not one-hot");
    }
  }
  require(hot >= 0, ErrorKind::input, "action is not one-hot");
  return static_cast<Move>(hot);
}

inline Move decode_action(const OneHot& action) {
  return decode_action(std::span<const double>(action.data(), kNumActions));
}

inline Vec2 direction(Move m) {
  switch (m) {
    case Move::left: return Vec2(-1.0, 0.0);
    case Move::right: return Vec2(1.0, 0.0);
    case Move::down: return Vec2(0.0, -1.0);
    case Move::up: return Vec2(0.0, 1.0);
    case Move::stay: return Vec2::Zero();
  }
  return Vec2::Zero();
}

// ---------------------------------------------------------------------------
// Observations

/// Slot offsets of one agent's observation vector:
///   [self_pos 2][self_vel 2][obstacle_rel 2*m][self_to_target 2]
///   [box_to_target 2][teammate_pos 2*(n-1)][teammate_vel 2*(n-1)]
/// Teammates appear in ascending agent order with the observer skipped.
struct ObservationLayout {
  int num_agents = 0;
  int num_obstacles = 0;

  ObservationLayout(int agents, int obstacles) : num_agents(agents), num_obstacles(obstacles) {}
  explicit ObservationLayout(const ScenarioConfig& c)
      : ObservationLayout(c.num_agents(), static_cast<int>(c.obstacles.size())) {}

  int self_pos() const { return 0; }
  int self_vel() const { return 2; }
  int obstacle_rel(int k) const { return 4 + 2 * k; }
  int self_to_target() const { return 4 + 2 * num_obstacles; }
  int box_to_target() const { return 6 + 2 * num_obstacles; }
  int teammate_pos(int slot) const { return 8 + 2 * num_obstacles + 2 * slot; }
  int teammate_vel(int slot) const { return 8 + 2 * num_obstacles + 2 * (num_agents - 1) + 2 * slot; }
  int total_dim() const { return 8 + 2 * num_obstacles + 4 * (num_agents - 1); }

  /// Position in observer's teammate ordering, or nullopt when j == observer.
  std::optional<int> teammate_slot(int observer, int j) const {
    if (j < 0 || j >= num_agents || j == observer) return std::nullopt;
    return j < observer ? j : j - 1;
  }

  /// The four slots (x, y, vx, vy) that describe agent j inside observer's vector.
  std::array<int, 4> teammate_block(int observer, int j) const {
    const auto slot = teammate_slot(observer, j);
    require(slot.has_value(), ErrorKind::input,
            "agent " + std::to_string(j) + " is not a teammate of agent " + std::to_string(observer));
    const int p = teammate_pos(*slot);
    const int v = teammate_vel(*slot);
    return {p, p + 1, v, v + 1};
  }
};

inline Eigen::VectorXd observe(const WorldState& s, int agent, const ScenarioConfig& config) {
  const ObservationLayout layout(config);
  require(agent >= 0 && agent < layout.num_agents, ErrorKind::input, "observe: agent index out of range");
  Eigen::VectorXd o(layout.total_dim());
  const Vec2& self = s.agent_pos[agent];
  o.segment<2>(layout.self_pos()) = self;
  o.segment<2>(layout.self_vel()) = s.agent_vel[agent];
  for (int k = 0; k < layout.num_obstacles; ++k)
    o.segment<2>(layout.obstacle_rel(k)) = config.obstacles[k].pos - self;
  o.segment<2>(layout.self_to_target()) = config.target.pos - self;
  o.segment<2>(layout.box_to_target()) = config.target.pos - s.box_pos;
  for (int j = 0; j < layout.num_agents; ++j) {
    const auto slot = layout.teammate_slot(agent, j);
    if (!slot) continue;
    o.segment<2>(layout.teammate_pos(*slot)) = s.agent_pos[j];
    o.segment<2>(layout.teammate_vel(*slot)) = s.agent_vel[j];
  }
  return o;
}

inline std::vector<Eigen::VectorXd> observe_all(const WorldState& s, const ScenarioConfig& config) {
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < config.num_agents(); ++i) out.push_back(observe(s, i, config));
  return out;
}

// ---------------------------------------------------------------------------
// Rewards

struct RewardWeights {
  double distance = 50.0;
  double push = 50.0;
  double goal = 1000.0;
  double collision = -50.0;
  double boundary = -50.0;
};

struct RewardBreakdown {
  double dis = 0.0;
  double push = 0.0;
  double goal = 0.0;
  double col = 0.0;
  double bound = 0.0;

  double total() const { return dis + push + goal + col + bound; }
};

/// Binary events detected during one step.
struct Contacts {
  std::vector<bool> pushing;          // agent overlaps box and moves toward its centre
  std::vector<bool> agent_collision;  // agent overlaps some other agent
  std::vector<bool> out_of_bounds;    // agent left the arena (before clamping)
  bool box_obstacle = false;

  explicit Contacts(int n = 0) : pushing(n, false), agent_collision(n, false), out_of_bounds(n, false) {}
};

inline bool goal_reached(const Vec2& box_pos, const ScenarioConfig& config) {
  return (box_pos - config.target.pos).norm() < config.goal_threshold;
}

/// Per-agent reward terms. Distance and goal terms are shared by the team;
/// push and boundary terms belong to one agent; an agent-agent collision
/// penalises both participants and a box-obstacle collision penalises all.
/// Each term fires at most once per agent per step.
inline std::vector<RewardBreakdown> reward_components(const WorldState& prev, const WorldState& next,
                                                      const Contacts& contacts,
                                                      const ScenarioConfig& config,
                                                      const RewardWeights& w = {}) {
  const int n = config.num_agents();
  const double d_prev = (prev.box_pos - config.target.pos).norm();
  const double d_next = (next.box_pos - config.target.pos).norm();
  const double dis = (d_prev - d_next) * w.distance;
  const bool goal = goal_reached(next.box_pos, config);
  std::vector<RewardBreakdown> out(n);
  for (int i = 0; i < n; ++i) {
    RewardBreakdown& r = out[i];
    r.dis = dis;
    r.push = contacts.pushing[i] ? w.push : 0.0;
    r.goal = goal ? w.goal : 0.0;
    r.col = (contacts.agent_collision[i] || contacts.box_obstacle) ? w.collision : 0.0;
    r.bound = contacts.out_of_bounds[i] ? w.boundary : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamics

struct StepOutcome {
  WorldState next_state;
  std::vector<double> rewards;
  std::vector<RewardBreakdown> reward_breakdown;
  Contacts contacts;
  bool done = false;
};

namespace detail {

// Softplus-ramped penetration force pushing `a` away from `b`. Beyond
// 40 ramp widths the force is below 1e-17 and is cut to exactly zero so
// separated bodies stay bitwise at rest.
inline Vec2 contact_force(const Vec2& a, double ra, const Vec2& b, double rb, const Physics& ph) {
  const Vec2 delta = a - b;
  const double dist = delta.norm();
  const double dmin = ra + rb;
  if (dist <= 0.0 || dist - dmin >= 40.0 * ph.contact_margin) return Vec2::Zero();
  const double x = -(dist - dmin) / ph.contact_margin;
  const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  const double penetration = softplus * ph.contact_margin;
  return ph.stiffness * penetration / dist * delta;
}

inline bool overlaps(const Vec2& a, double ra, const Vec2& b, double rb) {
  return (a - b).norm() < ra + rb;
}

}  // namespace detail

inline StepOutcome step(const WorldState& state, std::span<const OneHot> joint_action,
                        const ScenarioConfig& config, const RewardWeights& weights = {}) {
  const int n = config.num_agents();
  require(!state.done, ErrorKind::usage, "step: episode already finished");
  require(static_cast<int>(joint_action.size()) == n, ErrorKind::input,
          "step: expected one action per agent");
  const Physics& ph = config.physics;

  std::vector<Vec2> agent_force(n, Vec2::Zero());
  for (int i = 0; i < n; ++i) agent_force[i] = ph.force * direction(decode_action(joint_action[i]));
  Vec2 box_force = Vec2::Zero();

  const double ra = config.agent_radius;
  const double rb = config.box_radius;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Vec2 f = detail::contact_force(state.agent_pos[i], ra, state.agent_pos[j], ra, ph);
      agent_force[i] += f;
      agent_force[j] -= f;
    }
    const Vec2 f = detail::contact_force(state.agent_pos[i], ra, state.box_pos, rb, ph);
    agent_force[i] += f;
    box_force -= f;
    for (const auto& o : config.obstacles)
      agent_force[i] += detail::contact_force(state.agent_pos[i], ra, o.pos, o.radius, ph);
  }
  for (const auto& o : config.obstacles)
    box_force += detail::contact_force(state.box_pos, rb, o.pos, o.radius, ph);

  StepOutcome out;
  WorldState& next = out.next_state;
  next = state;
  next.step_index = state.step_index + 1;
  out.contacts = Contacts(n);

  const double keep = 1.0 - ph.damping;
  const double bound = config.world_bound;
  for (int i = 0; i < n; ++i) {
    Vec2 v = state.agent_vel[i] * keep + agent_force[i] / ph.agent_mass * ph.dt;
    Vec2 p = state.agent_pos[i] + v * ph.dt;
    for (int a = 0; a < 2; ++a) {
      if (std::abs(p(a)) > bound) {
        out.contacts.out_of_bounds[i] = true;
        p(a) = std::copysign(bound, p(a));
        v(a) = 0.0;
      }
    }
    next.agent_pos[i] = p;
    next.agent_vel[i] = v;
  }
  next.box_vel = state.box_vel * keep + box_force / ph.box_mass * ph.dt;
  next.box_pos = state.box_pos + next.box_vel * ph.dt;
  for (int a = 0; a < 2; ++a) {
    if (std::abs(next.box_pos(a)) > bound) {
      next.box_pos(a) = std::copysign(bound, next.box_pos(a));
      next.box_vel(a) = 0.0;
    }
  }

  for (int i = 0; i < n; ++i) {
    const Vec2& p = next.agent_pos[i];
    const Vec2 to_box = next.box_pos - p;
    out.contacts.pushing[i] =
        detail::overlaps(p, ra, next.box_pos, rb) && next.agent_vel[i].dot(to_box) > 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i && detail::overlaps(p, ra, next.agent_pos[j], ra)) out.contacts.agent_collision[i] = true;
  }
  for (const auto& o : config.obstacles)
    if (detail::overlaps(next.box_pos, rb, o.pos, o.radius)) out.contacts.box_obstacle = true;

  out.reward_breakdown = reward_components(state, next, out.contacts, config, weights);
  out.rewards.resize(n);
  for (int i = 0; i < n; ++i) out.rewards[i] = out.reward_breakdown[i].total();

  if (goal_reached(next.box_pos, config)) {
    next.done = true;
    next.done_reason = DoneReason::goal;
  } else if (next.step_index >= config.max_steps) {
    next.done = true;
    next.done_reason = DoneReason::timeout;
  }
  out.done = next.done;
  return out;
}

inline StepOutcome step(const WorldState& state, const std::vector<OneHot>& joint_action,
                        const ScenarioConfig& config, const RewardWeights& weights = {}) {
  return step(state, std::span<const OneHot>(joint_action), config, weights);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline nlohmann::json vec_json(const Vec2& v) { return nlohmann::json::array({v.x(), v.y()}); }
inline Vec2 json_vec(const nlohmann::json& j) {
  const auto a = j.get<std::vector<double>>();
  require(a.size() == 2, ErrorKind::configuration, "scenario: positions need two coordinates");
  return Vec2(a[0], a[1]);
}
}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  using detail::vec_json;
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : c.agent_starts) agents.push_back({{"pos", vec_json(a)}, {"radius", c.agent_radius}});
  nlohmann::json obstacles = nlohmann::json::array();
  for (const auto& o : c.obstacles) obstacles.push_back({{"pos", vec_json(o.pos)}, {"radius", o.radius}});
  return {
      {"scenario_id", to_string(c.scenario_id)},
      {"agents", agents},
      {"box", {{"pos", vec_json(c.box_start)}, {"radius", c.box_radius}, {"mass", c.physics.box_mass}}},
      {"obstacles", obstacles},
      {"target", {{"pos", vec_json(c.target.pos)}, {"radius", c.target.radius}}},
      {"goal_threshold", c.goal_threshold},
      {"world_bound", c.world_bound},
      {"dt", c.physics.dt},
      {"damping", c.physics.damping},
      {"stiffness", c.physics.stiffness},
      {"contact_margin", c.physics.contact_margin},
      {"force", c.physics.force},
      {"agent_mass", c.physics.agent_mass},
      {"max_steps", c.max_steps},
  };
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  using detail::json_vec;
  try {
    ScenarioConfig c;
    c.scenario_id = parse_scenario(j.at("scenario_id").get<std::string>());
    const auto& agents = j.at("agents");
    require(!agents.empty(), ErrorKind::configuration, "scenario: no agents");
    c.agent_radius = agents.front().at("radius").get<double>();
    for (const auto& a : agents) {
      require(a.at("radius").get<double>() == c.agent_radius, ErrorKind::configuration,
              "scenario: all agents must share one radius");
      c.agent_starts.push_back(json_vec(a.at("pos")));
    }
    c.box_start = json_vec(j.at("box").at("pos"));
    c.box_radius = j.at("box").at("radius").get<double>();
    c.physics.box_mass = j.at("box").value("mass", c.physics.box_mass);
    for (const auto& o : j.at("obstacles")) c.obstacles.push_back({json_vec(o.at("pos")), o.at("radius").get<double>()});
    c.target = {json_vec(j.at("target").at("pos")), j.at("target").at("radius").get<double>()};
    c.goal_threshold = j.value("goal_threshold", c.box_radius + c.target.radius);
    c.world_bound = j.at("world_bound").get<double>();
    c.physics.dt = j.at("dt").get<double>();
    c.physics.damping = j.at("damping").get<double>();
    c.physics.stiffness = j.at("stiffness").get<double>();
    c.physics.contact_margin = j.value("contact_margin", c.physics.contact_margin);
    c.physics.force = j.at("force").get<double>();
    c.physics.agent_mass = j.value("agent_mass", c.physics.agent_mass);
    c.max_steps = j.at("max_steps").get<int>();
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::configuration, std::string("scenario: ") + e.what());
  }
}

}  // namespace hlab::world
