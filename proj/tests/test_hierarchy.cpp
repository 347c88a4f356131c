#include <gtest/gtest.h>

#include "hlab/hierarchy.hpp"
#include "support.hpp"

namespace h = hlab::hierarchy;
namespace m = hlab::maddpg;
namespace nn = hlab::nn;
namespace w = hlab::world;
namespace ht = hlab::testing;
using hlab::ErrorKind;
using hlab::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

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

h::SensitivityMatrix matrix3(double g12, double g13, double g21, double g23, double g31, double g32) {
  h::SensitivityMatrix m{0, MatrixXd::Zero(3, 3)};
  m.entries(0, 1) = g12;
  m.entries(0, 2) = g13;
  m.entries(1, 0) = g21;
  m.entries(1, 2) = g23;
  m.entries(2, 0) = g31;
  m.entries(2, 1) = g32;
  return m;
}

h::DependencyTrace trace_from_leaders(const std::vector<int>& leaders) {
  h::DependencyTrace t;
  for (int s = 0; s < static_cast<int>(leaders.size()); ++s) {
    VectorXd d = VectorXd::Constant(3, -0.5);
    d(leaders[s]) = 1.0;
    t.dependencies.push_back(d);
    t.sensitivities.push_back({s, MatrixXd::Zero(3, 3)});
    t.leaders.push_back(leaders[s]);
    t.ties.push_back(false);
  }
  return t;
}

std::vector<int> runs(std::initializer_list<std::pair<int, int>> spec) {
  std::vector<int> out;
  for (auto [leader, len] : spec) out.insert(out.end(), len, leader);
  return out;
}

}  // namespace

TEST(Dependency, WorkedExample) {
  const auto d = h::dependency_values(matrix3(0.2, 0.1, 0.5, 0.3, 0.4, 0.6));
  // The decimal inputs are not binary fractions, so allow a few ulps.
  EXPECT_NEAR(d(0), 0.6, 4e-16);
  EXPECT_EQ(d(1), 0.0);
  EXPECT_NEAR(d(2), -0.6, 4e-16);
  EXPECT_EQ(d(0), -d(2));
  const auto v = h::identify_hierarchy(d);
  EXPECT_TRUE(v.emerged);
  EXPECT_EQ(v.leader, 0);
  EXPECT_EQ(v.followers, (std::vector<int>{1, 2}));
  EXPECT_FALSE(v.tie);
}

TEST(Dependency, DyadicExampleIsExact) {
  const auto d = h::dependency_values(matrix3(0.25, 0.125, 0.5, 0.375, 0.5, 0.625));
  EXPECT_EQ(d(0), 0.625);
  EXPECT_EQ(d(1), 0.0);
  EXPECT_EQ(d(2), -0.625);
}

TEST(Dependency, SymmetricMatrixGivesZero) {
  const auto d = h::dependency_values(matrix3(0.3, 0.7, 0.3, 0.2, 0.7, 0.2));
  EXPECT_EQ(d, VectorXd::Zero(3));
  EXPECT_FALSE(h::identify_hierarchy(d).emerged);
}

TEST(Dependency, ZeroSumOverRandomMatrices) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + trial % 5;
    h::SensitivityMatrix s{0, MatrixXd::Zero(n, n)};
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) s.entries(i, j) = rng.uniform(0.0, 10.0);
    EXPECT_LT(std::abs(h::dependency_values(s).sum()), 1e-9);
  }
}

TEST(Hierarchy, TieResolvesToLowestIndex) {
  VectorXd d(3);
  d << 0.5, 0.5, -1.0;
  const auto v = h::identify_hierarchy(d);
  EXPECT_TRUE(v.emerged);
  EXPECT_TRUE(v.tie);
  EXPECT_EQ(v.leader, 0);
  d << -1.0, 0.5, 0.5;
  EXPECT_EQ(h::identify_hierarchy(d).leader, 1);
}

TEST(Hierarchy, AllEqualIsNoHierarchy) {
  const auto v = h::identify_hierarchy(VectorXd::Zero(3));
  EXPECT_FALSE(v.emerged);
  EXPECT_EQ(v.leader, -1);
}

TEST(Sensitivity, ZeroWhenActorIgnoresTeammate) {
  const w::ObservationLayout layout(3, 2);
  auto actor = ht::random_net({20, 8, 6, 5}, nn::Head::softmax, 3);
  for (int k : layout.teammate_block(0, 2)) actor.layers[0].weight.col(k).setZero();
  Rng rng(4);
  const VectorXd obs = ht::random_vector(rng, 20);
  EXPECT_EQ(h::pairwise_sensitivity(actor, obs, layout, 0, 2), 0.0);
  EXPECT_GT(h::pairwise_sensitivity(actor, obs, layout, 0, 1), 0.0);
}

TEST(Sensitivity, LinearActorClosedForm) {
  // Linear head, one layer: the Jacobian is W, so |grad_ij| is the norm of W's teammate columns.
  const w::ObservationLayout layout(3, 1);
  nn::MlpParams actor;
  MatrixXd wt = MatrixXd::Zero(5, layout.total_dim());
  const auto cols = layout.teammate_block(1, 2);
  wt(0, cols[0]) = 3.0;
  wt(4, cols[3]) = -4.0;
  wt(2, 0) = 100.0;  // not a teammate column
  actor.layers.push_back({wt, VectorXd::Zero(5)});
  EXPECT_EQ(h::pairwise_sensitivity(actor, VectorXd::Zero(layout.total_dim()), layout, 1, 2), 5.0);
  EXPECT_EQ(h::pairwise_sensitivity(actor, VectorXd::Zero(layout.total_dim()), layout, 1, 2, 1.0), 7.0);
}

TEST(Sensitivity, MatchesFiniteDifferenceOfSoftmaxOutput) {
  const w::ObservationLayout layout(3, 2);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto actor = ht::random_net({20, 8, 6, 5}, nn::Head::softmax, 40 + trial);
    const VectorXd obs = ht::random_vector(rng, 20);
    const MatrixXd fd = ht::fd_input_jacobian(actor, obs);
    for (int j : {0, 2}) {
      MatrixXd block(5, 4);
      const auto cols = layout.teammate_block(1, j);
      for (int k = 0; k < 4; ++k) block.col(k) = fd.col(cols[k]);
      const double s = h::pairwise_sensitivity(actor, obs, layout, 1, j);
      EXPECT_LT(std::abs(s - block.norm()) / std::max(s, 1e-8), 1e-6);
    }
  }
}

TEST(Sensitivity, SelfOrUnobservedIsInputError) {
  const w::ObservationLayout layout(3, 2);
  const auto actor = ht::random_net({20, 8, 6, 5}, nn::Head::softmax, 3);
  EXPECT_EQ(kind_of([&] { h::pairwise_sensitivity(actor, VectorXd::Zero(20), layout, 1, 1); }), ErrorKind::input);
  EXPECT_EQ(kind_of([&] { h::pairwise_sensitivity(actor, VectorXd::Zero(20), layout, 1, 3); }), ErrorKind::input);
}

TEST(Trace, RolloutAnalysisShapesAndZeroSum) {
  const auto team = ht::small_team({20, 20, 20}, 6, 12);
  const auto cfg = w::build_scenario(w::ScenarioId::A);
  const auto actors = team.actors();
  const auto traj = m::rollout(actors, cfg);
  const auto trace = h::analyze_rollout(traj, actors, w::ObservationLayout(cfg));
  EXPECT_EQ(trace.length(), traj.length());
  EXPECT_EQ(trace.num_agents(), 3);
  for (int t = 0; t < trace.length(); ++t) {
    EXPECT_LT(std::abs(trace.dependencies[t].sum()), 1e-9);
    EXPECT_EQ(trace.sensitivities[t].entries.diagonal(), VectorXd::Zero(3));
  }
  const std::string csv = h::trace_csv(trace);
  const std::string header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header, "step,D_1,D_2,D_3,grad_1_2,grad_1_3,grad_2_1,grad_2_3,grad_3_1,grad_3_2");
}

TEST(Trace, MismatchedActorsAreIncompatible) {
  const auto team = ht::small_team({20, 20, 20}, 6, 12);
  const auto cfg = w::build_scenario(w::ScenarioId::A);
  const auto actors = team.actors();
  const auto traj = m::rollout(actors, cfg);
  EXPECT_EQ(kind_of([&] { h::analyze_rollout(traj, actors, w::ObservationLayout(3, 1)); }),
            ErrorKind::incompatibility);
}

TEST(Segments, ThreePhaseTraceAlternates) {
  const auto r = h::segment_phases(trace_from_leaders(runs({{0, 12}, {1, 26}, {0, 12}})));
  ASSERT_EQ(r.segments.size(), 3u);
  EXPECT_EQ(r.segments[0].start, 0);
  EXPECT_EQ(r.segments[0].end, 11);
  EXPECT_EQ(r.segments[1].start, 12);
  EXPECT_EQ(r.segments[1].end, 37);
  EXPECT_EQ(r.segments[2].start, 38);
  EXPECT_EQ(r.segments[2].end, 49);
  EXPECT_EQ(r.pattern, h::Pattern::alternating_dominance);
  EXPECT_EQ(h::leader_sequence(r), "1-2-1");
}

TEST(Segments, ConstantLeaderPersists) {
  const auto r = h::segment_phases(trace_from_leaders(runs({{2, 50}})));
  ASSERT_EQ(r.segments.size(), 1u);
  EXPECT_EQ(r.pattern, h::Pattern::persistent_dominance);
  EXPECT_EQ(r.segments[0].mean_dependency(2), 1.0);
}

TEST(Segments, ShortSpikeIsAbsorbed) {
  const auto base = h::segment_phases(trace_from_leaders(runs({{0, 20}, {1, 30}})));
  const auto spiked = h::segment_phases(trace_from_leaders(runs({{0, 8}, {2, 1}, {0, 11}, {1, 30}})), 3);
  ASSERT_EQ(spiked.segments.size(), base.segments.size());
  for (std::size_t k = 0; k < base.segments.size(); ++k) {
    EXPECT_EQ(spiked.segments[k].start, base.segments[k].start);
    EXPECT_EQ(spiked.segments[k].end, base.segments[k].end);
    EXPECT_EQ(spiked.segments[k].leader, base.segments[k].leader);
  }
}

TEST(Segments, ShortOpeningRunJoinsTheNext) {
  const auto r = h::segment_phases(trace_from_leaders(runs({{1, 2}, {0, 30}})), 3);
  ASSERT_EQ(r.segments.size(), 1u);
  EXPECT_EQ(r.segments[0].leader, 0);
  EXPECT_EQ(r.segments[0].start, 0);
}

// Property: segments tile the trace without gaps and satisfy the length rule.
TEST(Segments, TilingProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> leaders;
    const int len = 1 + static_cast<int>(rng.below(50));
    for (int t = 0; t < len; ++t) leaders.push_back(static_cast<int>(rng.below(3)));
    const int min_len = static_cast<int>(rng.below(5));
    const auto segs = h::leader_segments(leaders, min_len);
    ASSERT_FALSE(segs.empty());
    EXPECT_EQ(segs.front().start, 0);
    EXPECT_EQ(segs.back().end, len - 1);
    for (std::size_t k = 0; k < segs.size(); ++k) {
      if (k > 0) {
        EXPECT_EQ(segs[k].start, segs[k - 1].end + 1);
        EXPECT_NE(segs[k].leader, segs[k - 1].leader);
      }
      if (segs.size() > 1) EXPECT_GE(segs[k].length(), min_len);
    }
  }
}

TEST(Report, JsonFields) {
  const auto r = h::segment_phases(trace_from_leaders(runs({{0, 12}, {1, 26}, {0, 12}})));
  const auto j = h::to_json(r);
  EXPECT_EQ(j.at("pattern"), "alternating_dominance");
  EXPECT_EQ(j.at("leader_sequence"), "1-2-1");
  EXPECT_EQ(j.at("segments").size(), 3u);
  EXPECT_EQ(j.at("segments")[1].at("leader"), 2);
  EXPECT_EQ(j.at("has_ties"), false);
}
