#include <gtest/gtest.h>

#include "hlab/world.hpp"
#include "support.hpp"

namespace w = hlab::world;
using hlab::ErrorKind;
using hlab::Rng;
using w::Move;
using w::Vec2;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const hlab::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no hlab::Error thrown";
  return ErrorKind::io;
}

std::vector<w::OneHot> all(int n, Move m) { return std::vector<w::OneHot>(n, w::one_hot(m)); }

// Three agents far apart, no obstacles, target at the origin.
w::ScenarioConfig open_field() {
  w::ScenarioConfig c = w::build_scenario(w::ScenarioId::A);
  c.obstacles.clear();
  c.agent_starts = {Vec2(-0.8, -0.8), Vec2(0.8, -0.8), Vec2(0.8, 0.8)};
  c.box_start = Vec2(-0.5, 0.5);
  c.target.pos = Vec2::Zero();
  c.goal_threshold = 0.05;
  return c;
}

}  // namespace

TEST(Scenario, TableGeometry) {
  const auto a = w::build_scenario(w::ScenarioId::A);
  EXPECT_EQ(a.target.pos, Vec2(-0.9, 0.9));
  ASSERT_EQ(a.obstacles.size(), 2u);
  EXPECT_EQ(a.obstacles[0].pos, Vec2(-0.3, 0.0));
  EXPECT_EQ(a.obstacles[1].pos, Vec2(0.3, 0.0));
  EXPECT_EQ(a.obstacles[0].radius, 0.2);

  const auto b = w::build_scenario(w::ScenarioId::B);
  EXPECT_EQ(b.target.pos, Vec2(0.9, 0.9));
  EXPECT_EQ(b.agent_starts[1], Vec2(0.5, -0.75));
  EXPECT_EQ(b.agent_radius, 0.05);

  const auto c = w::build_scenario(w::ScenarioId::C);
  ASSERT_EQ(c.obstacles.size(), 1u);
  EXPECT_EQ(c.obstacles[0].pos, Vec2(0.0, 0.0));
  EXPECT_EQ(c.target.pos, Vec2(0.0, 0.9));
  EXPECT_EQ(c.box_start, Vec2(0.0, -0.5));
  EXPECT_EQ(c.box_radius, 0.075);
}

TEST(Scenario, UnknownIdIsConfigurationError) {
  EXPECT_EQ(kind_of([] { w::build_scenario("d"); }), ErrorKind::configuration);
}

TEST(Scenario, JsonRoundTrip) {
  for (auto id : {w::ScenarioId::A, w::ScenarioId::B, w::ScenarioId::C}) {
    const auto c = w::build_scenario(id);
    const auto j = w::to_json(c);
    for (const char* key : {"scenario_id", "agents", "box", "obstacles", "target", "world_bound", "dt", "damping",
                            "stiffness", "force", "max_steps"})
      EXPECT_TRUE(j.contains(key)) << key;
    const auto back = w::scenario_from_json(nlohmann::json::parse(j.dump()));
    EXPECT_EQ(w::to_json(back), j);
  }
}

TEST(Reset, StartsAtTablePositionsAtRest) {
  const auto c = w::build_scenario(w::ScenarioId::A);
  const auto s = w::reset(c, 5);
  EXPECT_EQ(s.agent_pos[0], Vec2(0.0, -0.75));
  EXPECT_EQ(s.agent_vel[0], Vec2::Zero());
  EXPECT_EQ(s.step_index, 0);
  EXPECT_FALSE(s.done);
  EXPECT_EQ(w::reset(w::build_scenario(w::ScenarioId::C), 99).box_pos, Vec2(0.0, -0.5));
  EXPECT_EQ(w::reset(c, 5), w::reset(c, 5));
}

TEST(Actions, Decode) {
  const double up[] = {0, 0, 0, 1, 0};
  const double stay[] = {0, 0, 0, 0, 1};
  const double two[] = {1, 1, 0, 0, 0};
  const double half[] = {0.5, 0.5, 0, 0, 0};
  EXPECT_EQ(w::decode_action(up), Move::up);
  EXPECT_EQ(w::decode_action(stay), Move::stay);
  EXPECT_EQ(w::direction(Move::stay), Vec2::Zero());
  EXPECT_EQ(kind_of([&] { w::decode_action(two); }), ErrorKind::input);
  EXPECT_EQ(kind_of([&] { w::decode_action(half); }), ErrorKind::input);
  for (int k = 0; k < w::kNumActions; ++k) EXPECT_EQ(static_cast<int>(w::decode_action(w::one_hot(k))), k);
}

TEST(Step, StayIsAFixedPoint) {
  const auto c = w::build_scenario(w::ScenarioId::A);
  const auto s = w::reset(c);
  const auto out = w::step(s, all(3, Move::stay), c);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(out.next_state.agent_pos[i], s.agent_pos[i]);
    EXPECT_EQ(out.next_state.agent_vel[i], Vec2::Zero());
    EXPECT_EQ(out.reward_breakdown[i].push, 0.0);
    EXPECT_EQ(out.reward_breakdown[i].col, 0.0);
    EXPECT_EQ(out.reward_breakdown[i].bound, 0.0);
    EXPECT_EQ(out.rewards[i], 0.0);
  }
  EXPECT_EQ(out.next_state.box_pos, s.box_pos);
  EXPECT_EQ(out.next_state.step_index, 1);
}

TEST(Step, DampedDriftHandComputed) {
  const auto c = open_field();
  auto s = w::reset(c);
  s.agent_vel[0] = Vec2(0.4, 0.0);
  const auto out = w::step(s, all(3, Move::stay), c);
  // v' = v (1 - 0.25); p' = p + dt v'
  EXPECT_DOUBLE_EQ(out.next_state.agent_vel[0].x(), 0.3);
  EXPECT_DOUBLE_EQ(out.next_state.agent_vel[0].y(), 0.0);
  EXPECT_DOUBLE_EQ(out.next_state.agent_pos[0].x(), -0.8 + 0.1 * 0.3);
  EXPECT_DOUBLE_EQ(out.next_state.agent_pos[0].y(), -0.8);
}

TEST(Step, ActionForceHandComputed) {
  auto c = open_field();
  c.physics.force = 3.0;
  const auto s = w::reset(c);
  std::vector<w::OneHot> a = all(3, Move::stay);
  a[1] = w::one_hot(Move::up);
  const auto out = w::step(s, a, c);
  EXPECT_DOUBLE_EQ(out.next_state.agent_vel[1].y(), 3.0 * 0.1);
  EXPECT_DOUBLE_EQ(out.next_state.agent_pos[1].y(), -0.8 + 0.1 * 0.3);
}

TEST(Step, PushingAgentEarnsPushReward) {
  auto c = open_field();
  c.agent_starts[0] = Vec2(-0.5, 0.5 - 0.12);  // overlapping the box from below
  auto s = w::reset(c);
  s.agent_vel[0] = Vec2(0.0, 0.5);
  auto a = all(3, Move::stay);
  a[0] = w::one_hot(Move::up);
  const auto out = w::step(s, a, c);
  EXPECT_TRUE(out.contacts.pushing[0]);
  EXPECT_EQ(out.reward_breakdown[0].push, 50.0);
  EXPECT_EQ(out.reward_breakdown[1].push, 0.0);
  EXPECT_GT(out.next_state.box_vel.y(), 0.0);
}

TEST(Step, AgentMovingAwayIsNotPushing) {
  auto c = open_field();
  c.agent_starts[0] = Vec2(-0.5, 0.5 - 0.12);
  auto s = w::reset(c);
  s.agent_vel[0] = Vec2(0.0, -1.0);
  const auto out = w::step(s, all(3, Move::stay), c);
  EXPECT_FALSE(out.contacts.pushing[0]);
  EXPECT_EQ(out.reward_breakdown[0].push, 0.0);
}

TEST(Step, AgentCollisionPenalisesBoth) {
  // Two touching agents closing at speed overlap after the step.
  auto c = open_field();
  c.agent_starts[1] = Vec2(-0.7, -0.8);
  auto s = w::reset(c);
  s.agent_vel[0] = Vec2(1.0, 0.0);
  s.agent_vel[1] = Vec2(-1.0, 0.0);
  const auto out = w::step(s, all(3, Move::stay), c);
  EXPECT_EQ(out.reward_breakdown[0].col, -50.0);
  EXPECT_EQ(out.reward_breakdown[1].col, -50.0);
  EXPECT_EQ(out.reward_breakdown[2].col, 0.0);
}

TEST(Step, BoxObstacleContactPenalisesTeam) {
  auto c = open_field();
  c.obstacles.push_back({Vec2(-0.5, 0.5 + 0.2), 0.15});
  auto s = w::reset(c);
  s.box_vel = Vec2(0.0, 1.0);
  const auto out = w::step(s, all(3, Move::stay), c);
  EXPECT_TRUE(out.contacts.box_obstacle);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(out.reward_breakdown[i].col, -50.0);
}

TEST(Step, BoundaryCrossingIsPenalisedAndClamped) {
  auto c = open_field();
  c.agent_starts[1] = Vec2(0.99, -0.8);
  auto s = w::reset(c);
  s.agent_vel[1] = Vec2(1.0, 0.0);
  auto a = all(3, Move::stay);
  a[1] = w::one_hot(Move::right);
  const auto out = w::step(s, a, c);
  EXPECT_EQ(out.reward_breakdown[1].bound, -50.0);
  EXPECT_EQ(out.reward_breakdown[0].bound, 0.0);
  EXPECT_EQ(out.next_state.agent_pos[1].x(), 1.0);
  EXPECT_EQ(out.next_state.agent_vel[1].x(), 0.0);
}

TEST(Step, GoalEndsEpisodeAndBlocksFurtherSteps) {
  auto c = open_field();
  c.box_start = Vec2(0.04, 0.0);
  const auto out = w::step(w::reset(c), all(3, Move::stay), c);
  EXPECT_TRUE(out.done);
  EXPECT_EQ(out.next_state.done_reason, w::DoneReason::goal);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(out.reward_breakdown[i].goal, 1000.0);
  EXPECT_EQ(kind_of([&] { w::step(out.next_state, all(3, Move::stay), c); }), ErrorKind::usage);
}

TEST(Step, TimeoutAfterMaxSteps) {
  auto c = w::build_scenario(w::ScenarioId::C);
  c.max_steps = 4;
  auto s = w::reset(c);
  for (int k = 0; k < 4; ++k) {
    EXPECT_FALSE(s.done);
    s = w::step(s, all(3, Move::stay), c).next_state;
  }
  EXPECT_TRUE(s.done);
  EXPECT_EQ(s.done_reason, w::DoneReason::timeout);
}

TEST(Step, WrongActionCountIsInputError) {
  const auto c = w::build_scenario(w::ScenarioId::A);
  EXPECT_EQ(kind_of([&] { w::step(w::reset(c), all(2, Move::stay), c); }), ErrorKind::input);
}

TEST(Rewards, DistanceTermArithmetic) {
  auto c = open_field();
  c.target.pos = Vec2::Zero();
  auto prev = w::reset(c);
  auto next = prev;
  prev.box_pos = Vec2(0.80, 0.0);
  next.box_pos = Vec2(0.75, 0.0);
  const auto r = w::reward_components(prev, next, w::Contacts(3), c);
  EXPECT_NEAR(r[0].dis, 2.5, 1e-12);
  EXPECT_EQ(r[0].dis, r[2].dis);
}

TEST(Rewards, TotalIsComponentSum) {
  auto c = open_field();
  auto prev = w::reset(c);
  auto next = prev;
  next.box_pos = Vec2(0.01, 0.0);
  w::Contacts k(3);
  k.pushing[0] = true;
  k.agent_collision[1] = true;
  k.out_of_bounds[2] = true;
  const auto r = w::reward_components(prev, next, k, c);
  for (const auto& b : r) EXPECT_EQ(b.total(), b.dis + b.push + b.goal + b.col + b.bound);
  EXPECT_EQ(r[0].push, 50.0);
  EXPECT_EQ(r[1].col, -50.0);
  EXPECT_EQ(r[2].bound, -50.0);
  EXPECT_EQ(r[0].goal, 1000.0);
}

TEST(Observe, LayoutAtReset) {
  const auto c = w::build_scenario(w::ScenarioId::A);
  const auto o = w::observe(w::reset(c), 0, c);
  ASSERT_EQ(o.size(), 20);
  EXPECT_EQ(o.segment<2>(0), Vec2(0.0, -0.75));
  EXPECT_EQ(o.segment<2>(2), Vec2::Zero());
  EXPECT_NEAR((o.segment<2>(4) - Vec2(-0.3, 0.75)).norm(), 0.0, 1e-15);
  const w::ObservationLayout layout(c);
  EXPECT_EQ(o.segment<2>(layout.teammate_pos(0)), Vec2(0.5, -0.75));
  EXPECT_EQ(o.segment<2>(layout.teammate_pos(1)), Vec2(-0.5, -0.75));
}

TEST(Observe, Dimensions) {
  EXPECT_EQ(w::ObservationLayout(w::build_scenario(w::ScenarioId::A)).total_dim(), 20);
  EXPECT_EQ(w::ObservationLayout(w::build_scenario(w::ScenarioId::B)).total_dim(), 20);
  EXPECT_EQ(w::ObservationLayout(w::build_scenario(w::ScenarioId::C)).total_dim(), 18);
}

TEST(Observe, TeammateBlocksAreDisjointAndCoverTail) {
  const w::ObservationLayout layout(3, 2);
  for (int i = 0; i < 3; ++i) {
    std::vector<int> seen;
    for (int j = 0; j < 3; ++j) {
      if (j == i) {
        EXPECT_EQ(kind_of([&] { layout.teammate_block(i, j); }), ErrorKind::input);
        continue;
      }
      for (int k : layout.teammate_block(i, j)) seen.push_back(k);
    }
    std::sort(seen.begin(), seen.end());
    for (int k = 0; k < 8; ++k) EXPECT_EQ(seen[k], 12 + k);
  }
}

// Random play: dimensions, reward bookkeeping and arena bounds hold at every step.
TEST(Properties, RandomPlayInvariants) {
  for (auto id : {w::ScenarioId::A, w::ScenarioId::B, w::ScenarioId::C}) {
    auto c = w::build_scenario(id);
    c.physics.force = 3.0;
    const int dim = w::ObservationLayout(c).total_dim();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      auto s = w::reset(c);
      while (!s.done) {
        for (int i = 0; i < 3; ++i) EXPECT_EQ(w::observe(s, i, c).size(), dim);
        std::vector<w::OneHot> a;
        for (int i = 0; i < 3; ++i) a.push_back(w::one_hot(static_cast<int>(rng.below(5))));
        const auto out = w::step(s, a, c);
        for (int i = 0; i < 3; ++i) {
          EXPECT_EQ(out.rewards[i], out.reward_breakdown[i].total());
          EXPECT_LE(out.next_state.agent_pos[i].cwiseAbs().maxCoeff(), c.world_bound);
        }
        EXPECT_LE(out.next_state.box_pos.cwiseAbs().maxCoeff(), c.world_bound);
        s = out.next_state;
      }
      EXPECT_LE(s.step_index, c.max_steps);
    }
  }
}

TEST(Properties, StepIsDeterministic) {
  const auto c = w::build_scenario(w::ScenarioId::B);
  auto run = [&] {
    Rng rng(3);
    auto s = w::reset(c);
    while (!s.done) {
      std::vector<w::OneHot> a;
      for (int i = 0; i < 3; ++i) a.push_back(w::one_hot(static_cast<int>(rng.below(5))));
      s = w::step(s, a, c).next_state;
    }
    return s;
  };
  EXPECT_EQ(run(), run());
}
