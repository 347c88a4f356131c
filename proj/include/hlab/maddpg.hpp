#pragma once

// Multi-agent deep deterministic policy gradients with centralised critics and
// decentralised actors, specialised to discrete 5-way movement actions.
//
// Actors emit 5 logits. Their softmax is the differentiable action seen by the
// critics during updates; execution picks the argmax (or an epsilon-greedy
// draw while exploring). Critic inputs are every agent's observation followed
// by every agent's 5-vector action, both in agent order.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlab/error.hpp"
#include "hlab/mlp.hpp"
#include "hlab/random.hpp"
#include "hlab/world.hpp"

namespace hlab::maddpg {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nn::MlpParams;
using world::kNumActions;
using world::OneHot;

struct TrainConfig {
  int max_episode_length = 50;
  int max_episodes = 20000;
  long learning_start_step = 50000;
  int learning_frequency = 100;
  int batch_size = 1256;
  double gamma = 0.97;
  double tau = 0.01;
  double lr_actor = 0.01;
  double lr_critic = 0.01;
  double max_grad_norm = 0.5;
  double logit_penalty = 1e-3;  // actor loss adds logit_penalty * mean squared logit norm
  int memory_size = 100000;
  int hidden1 = nn::kHidden1;
  int hidden2 = nn::kHidden2;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.25;  // of max_episodes
  int checkpoint_every = 1000;           // episodes; 0 disables periodic checkpoints
  double action_force = 3.0;             // world action force, kept with the run
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& c) {
  auto check = [](bool ok, const std::string& msg) {
    require(ok, ErrorKind::configuration, "train config: " + msg);
  };
  check(c.max_episode_length > 0, "max_episode_length must be positive");
  check(c.max_episodes > 0, "max_episodes must be positive");
  check(c.learning_start_step >= 0, "learning_start_step must be nonnegative");
  check(c.learning_frequency > 0, "learning_frequency must be positive");
  check(c.batch_size > 0, "batch_size must be positive");
  check(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma must lie in [0, 1]");
  check(c.tau > 0.0 && c.tau <= 1.0, "tau must lie in (0, 1]");
  check(c.lr_actor > 0.0 && c.lr_critic > 0.0, "learning rates must be positive");
  check(c.max_grad_norm > 0.0, "max_grad_norm must be positive");
  check(c.logit_penalty >= 0.0, "logit_penalty must be nonnegative");
  check(c.memory_size > 0, "memory_size must be positive");
  check(c.hidden1 > 0 && c.hidden2 > 0, "hidden sizes must be positive");
  check(c.epsilon_start >= 0.0 && c.epsilon_start <= 1.0 && c.epsilon_end >= 0.0 &&
            c.epsilon_end <= 1.0,
        "epsilon bounds must lie in [0, 1]");
  check(c.epsilon_decay_fraction >= 0.0, "epsilon_decay_fraction must be nonnegative");
  check(c.checkpoint_every >= 0, "checkpoint_every must be nonnegative");
  check(c.action_force >= 0.0, "action_force must be nonnegative");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"max_episode_length", c.max_episode_length},
      {"max_episodes", c.max_episodes},
      {"learning_start_step", c.learning_start_step},
      {"learning_frequency", c.learning_frequency},
      {"batch_size", c.batch_size},
      {"gamma", c.gamma},
      {"tau", c.tau},
      {"lr_actor", c.lr_actor},
      {"lr_critic", c.lr_critic},
      {"max_grad_norm", c.max_grad_norm},
      {"logit_penalty", c.logit_penalty},
      {"memory_size", c.memory_size},
      {"hidden1", c.hidden1},
      {"hidden2", c.hidden2},
      {"epsilon_start", c.epsilon_start},
      {"epsilon_end", c.epsilon_end},
      {"epsilon_decay_fraction", c.epsilon_decay_fraction},
      {"checkpoint_every", c.checkpoint_every},
      {"action_force", c.action_force},
      {"seed", c.seed},
  };
}

/// Overlays every key present in `j` onto `base`. Unknown keys are rejected.
inline TrainConfig merge_config(TrainConfig base, const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::configuration, "train config: expected a JSON object");
  const nlohmann::json known = to_json(base);
  try {
    for (const auto& [key, value] : j.items()) {
      require(known.contains(key), ErrorKind::configuration, "train config: unknown key '" + key + "'");
      if (key == "max_episode_length") base.max_episode_length = value.get<int>();
      else if (key == "max_episodes") base.max_episodes = value.get<int>();
      else if (key == "learning_start_step") base.learning_start_step = value.get<long>();
      else if (key == "learning_frequency") base.learning_frequency = value.get<int>();
      else if (key == "batch_size") base.batch_size = value.get<int>();
      else if (key == "gamma") base.gamma = value.get<double>();
      else if (key == "tau") base.tau = value.get<double>();
      else if (key == "lr_actor") base.lr_actor = value.get<double>();
      else if (key == "lr_critic") base.lr_critic = value.get<double>();
      else if (key == "max_grad_norm") base.max_grad_norm = value.get<double>();
      else if (key == "logit_penalty") base.logit_penalty = value.get<double>();
      else if (key == "memory_size") base.memory_size = value.get<int>();
      else if (key == "hidden1") base.hidden1 = value.get<int>();
      else if (key == "hidden2") base.hidden2 = value.get<int>();
      else if (key == "epsilon_start") base.epsilon_start = value.get<double>();
      else if (key == "epsilon_end") base.epsilon_end = value.get<double>();
      else if (key == "epsilon_decay_fraction") base.epsilon_decay_fraction = value.get<double>();
      else if (key == "checkpoint_every") base.checkpoint_every = value.get<int>();
      else if (key == "action_force") base.action_force = value.get<double>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::configuration, std::string("train config: ") + e.what());
  }
  validate(base);
  return base;
}

/// Linear anneal from epsilon_start to epsilon_end over the first
/// epsilon_decay_fraction of all episodes, constant afterwards.
inline double epsilon_at(const TrainConfig& c, int episode) {
  const double horizon = c.epsilon_decay_fraction * c.max_episodes;
  if (horizon <= 0.0) return c.epsilon_end;
  const double t = episode / horizon;
  if (t >= 1.0) return c.epsilon_end;
  return c.epsilon_start + (c.epsilon_end - c.epsilon_start) * t;
}

/// splitmix64 finaliser; derives independent sub-seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Networks

struct AgentNets {
  MlpParams actor;
  MlpParams critic;
  MlpParams actor_target;
  MlpParams critic_target;
  nn::OptimizerState actor_opt;
  nn::OptimizerState critic_opt;
};

struct Team {
  std::vector<AgentNets> agents;
  std::vector<int> obs_dims;

  int num_agents() const { return static_cast<int>(obs_dims.size()); }
  int joint_obs_dim() const {
    int s = 0;
    for (int d : obs_dims) s += d;
    return s;
  }
  int critic_input_dim() const { return joint_obs_dim() + kNumActions * num_agents(); }
  int obs_offset(int agent) const {
    int s = 0;
    for (int k = 0; k < agent; ++k) s += obs_dims[k];
    return s;
  }
  int action_offset(int agent) const { return joint_obs_dim() + kNumActions * agent; }

  std::vector<MlpParams> actors() const {
    std::vector<MlpParams> out;
    for (const auto& a : agents) out.push_back(a.actor);
    return out;
  }
};

inline Team make_team(const std::vector<int>& obs_dims, const TrainConfig& config) {
  Team team;
  team.obs_dims = obs_dims;
  const int critic_in = team.critic_input_dim();
  for (std::size_t i = 0; i < obs_dims.size(); ++i) {
    AgentNets nets;
    nets.actor = nn::init_params({obs_dims[i], config.hidden1, config.hidden2, kNumActions},
                                 nn::Head::softmax, mix_seed(config.seed, 2 * i));
    nets.critic = nn::init_params({critic_in, config.hidden1, config.hidden2, 1}, nn::Head::linear,
                                  mix_seed(config.seed, 2 * i + 1));
    nets.actor_target = nets.actor;
    nets.critic_target = nets.critic;
    nets.actor_opt = nn::OptimizerState::for_params(nets.actor, config.lr_actor);
    nets.critic_opt = nn::OptimizerState::for_params(nets.critic, config.lr_critic);
    team.agents.push_back(std::move(nets));
  }
  return team;
}

inline void sync_targets(Team& team, double tau) {
  for (auto& a : team.agents) {
    nn::soft_update(a.actor_target, a.actor, tau);
    nn::soft_update(a.critic_target, a.critic, tau);
  }
}

// ---------------------------------------------------------------------------
// Acting

enum class ActMode { explore, greedy };

struct ActionChoice {
  OneHot relaxed;   // softmax of the actor logits
  OneHot executed;  // one-hot actually applied to the world
  int index = 0;
};

inline int argmax(const VectorXd& v) {
  Eigen::Index k = 0;
  v.maxCoeff(&k);
  return static_cast<int>(k);
}

/// Greedy: argmax of the logits. Explore: with probability epsilon a uniform
/// random action, otherwise greedy. `rng` is only consulted when exploring.
inline ActionChoice select_action(const MlpParams& actor, const VectorXd& obs, ActMode mode,
                                  double epsilon, Rng& rng) {
  require(obs.size() == actor.input_dim(), ErrorKind::input, "select_action: observation size mismatch");
  const nn::ForwardCache cache = nn::forward_batch(actor, obs);
  ActionChoice choice;
  choice.relaxed = actor.head == nn::Head::softmax ? OneHot(cache.output.col(0))
                                                   : OneHot(nn::softmax(cache.logits.col(0)));
  choice.index = argmax(cache.logits.col(0));
  if (mode == ActMode::explore && rng.uniform() < epsilon)
    choice.index = static_cast<int>(rng.below(kNumActions));
  choice.executed = world::one_hot(choice.index);
  return choice;
}

// ---------------------------------------------------------------------------
// Replay memory

struct Transition {
  std::vector<VectorXd> joint_obs;
  std::vector<OneHot> relaxed_action;
  std::vector<OneHot> executed_action;
  std::vector<double> rewards;
  std::vector<VectorXd> next_joint_obs;
  bool done = false;
};

/// Fixed-capacity ring; once full the oldest transition is overwritten.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    require(capacity > 0, ErrorKind::input, "replay buffer capacity must be positive");
    ring_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    if (ring_.size() < capacity_) {
      ring_.push_back(std::move(t));
    } else {
      ring_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  std::size_t size() const { return ring_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t write_cursor() const { return cursor_; }
  const Transition& at(std::size_t k) const { return ring_.at(k); }

  bool can_sample(std::size_t batch) const { return batch > 0 && ring_.size() >= batch; }

  /// Uniform draw of `batch` indices with replacement.
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    require(can_sample(batch), ErrorKind::usage, "replay buffer holds fewer transitions than the batch size");
    std::vector<std::size_t> idx(batch);
    for (auto& k : idx) k = static_cast<std::size_t>(rng.below(ring_.size()));
    return idx;
  }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Transition> ring_;
};

/// Column-per-sample view of a minibatch.
struct Batch {
  MatrixXd joint_obs;       // joint_obs_dim x N
  MatrixXd next_joint_obs;  // joint_obs_dim x N
  MatrixXd actions;         // 5n x N, executed one-hot actions
  MatrixXd rewards;         // n x N
  VectorXd done;            // N, 1.0 for terminal

  Eigen::Index size() const { return joint_obs.cols(); }
};

namespace detail {
template <class Get>
Batch fill_batch(const Team& team, std::size_t count, Get get) {
  require(count > 0, ErrorKind::input, "minibatch must be nonempty");
  const int n = team.num_agents();
  const auto N = static_cast<Eigen::Index>(count);
  Batch b{MatrixXd(team.joint_obs_dim(), N), MatrixXd(team.joint_obs_dim(), N),
          MatrixXd(kNumActions * n, N), MatrixXd(n, N), VectorXd(N)};
  for (Eigen::Index c = 0; c < N; ++c) {
    const Transition& t = get(static_cast<std::size_t>(c));
    require(static_cast<int>(t.joint_obs.size()) == n && static_cast<int>(t.next_joint_obs.size()) == n &&
                static_cast<int>(t.executed_action.size()) == n && static_cast<int>(t.rewards.size()) == n,
            ErrorKind::input, "transition agent count mismatch");
    for (int i = 0; i < n; ++i) {
      require(t.joint_obs[i].size() == team.obs_dims[i] && t.next_joint_obs[i].size() == team.obs_dims[i],
              ErrorKind::input, "transition observation size mismatch");
      b.joint_obs.block(team.obs_offset(i), c, team.obs_dims[i], 1) = t.joint_obs[i];
      b.next_joint_obs.block(team.obs_offset(i), c, team.obs_dims[i], 1) = t.next_joint_obs[i];
      b.actions.block(kNumActions * i, c, kNumActions, 1) = t.executed_action[i];
      b.rewards(i, c) = t.rewards[i];
    }
    b.done(c) = t.done ? 1.0 : 0.0;
  }
  return b;
}
}  // namespace detail

inline Batch make_batch(const Team& team, std::span<const Transition> transitions) {
  return detail::fill_batch(team, transitions.size(),
                            [&](std::size_t k) -> const Transition& { return transitions[k]; });
}

inline Batch make_batch(const Team& team, const ReplayBuffer& buffer, std::span<const std::size_t> indices) {
  return detail::fill_batch(team, indices.size(),
                            [&](std::size_t k) -> const Transition& { return buffer.at(indices[k]); });
}

// ---------------------------------------------------------------------------
// Updates

inline MatrixXd stack_rows(const MatrixXd& top, const MatrixXd& bottom) {
  MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

/// Softmax actions of every target actor on the next observations (5n x N).
inline MatrixXd target_actions(const Team& team, const MatrixXd& next_joint_obs) {
  const int n = team.num_agents();
  MatrixXd a(kNumActions * n, next_joint_obs.cols());
  for (int j = 0; j < n; ++j) {
    const MatrixXd obs_j = next_joint_obs.middleRows(team.obs_offset(j), team.obs_dims[j]);
    a.middleRows(kNumActions * j, kNumActions) = nn::forward_batch(team.agents[j].actor_target, obs_j).output;
  }
  return a;
}

/// y = r_i + gamma * (1 - done) * Q_i'(s', a'_1..a'_n), a'_j = softmax of target actor j.
inline VectorXd td_targets(const Team& team, int agent, const Batch& batch, double gamma,
                           const MatrixXd& next_actions) {
  const MatrixXd q = nn::forward_batch(team.agents[agent].critic_target,
                                       stack_rows(batch.next_joint_obs, next_actions)).output;
  const VectorXd not_done = VectorXd::Ones(batch.size()) - batch.done;
  return batch.rewards.row(agent).transpose() + gamma * not_done.cwiseProduct(q.row(0).transpose());
}

/// Single-sample form of td_targets.
inline double td_target(double reward, std::span<const VectorXd> next_joint_obs, const Team& team,
                        int agent, double gamma, bool done) {
  Transition t;
  t.joint_obs.assign(next_joint_obs.begin(), next_joint_obs.end());
  t.next_joint_obs = t.joint_obs;
  t.executed_action.assign(team.num_agents(), OneHot::Zero());
  t.rewards.assign(team.num_agents(), 0.0);
  t.rewards[agent] = reward;
  t.done = done;
  const Transition ts[] = {t};
  const Batch b = make_batch(team, ts);
  return td_targets(team, agent, b, gamma, target_actions(team, b.next_joint_obs))(0);
}

struct UpdateStats {
  double value = 0.0;      // critic loss or actor objective, before the step
  double grad_norm = 0.0;  // before clipping
};

/// One descent step on (1/N) sum (Q_i(s, a) - y)^2. Returns the pre-step loss.
inline UpdateStats critic_update(int agent, const Batch& batch, const VectorXd& targets, Team& team,
                                 const TrainConfig& config) {
  require(batch.size() > 0, ErrorKind::input, "critic_update: empty minibatch");
  AgentNets& nets = team.agents[agent];
  const nn::ForwardCache cache = nn::forward_batch(nets.critic, stack_rows(batch.joint_obs, batch.actions));
  const VectorXd residual = cache.output.row(0).transpose() - targets;
  const double N = static_cast<double>(batch.size());
  UpdateStats s;
  s.value = residual.squaredNorm() / N;
  if (!std::isfinite(s.value))
    fail(ErrorKind::diverged, "critic loss of agent " + std::to_string(agent + 1) + " is not finite");
  const MatrixXd upstream = (2.0 / N) * residual.transpose();
  nn::BackwardResult back = nn::backward_batch(nets.critic, cache, upstream);
  s.grad_norm = nn::clip_and_apply(nets.critic_opt, nets.critic, std::move(back.grads), config.max_grad_norm);
  return s;
}

inline UpdateStats critic_update(int agent, const Batch& batch, Team& team, const TrainConfig& config) {
  const VectorXd y = td_targets(team, agent, batch, config.gamma, target_actions(team, batch.next_joint_obs));
  return critic_update(agent, batch, y, team, config);
}

/// Objective J = (1/N) sum Q_i(s, a_1..softmax(actor_i(o_i))..a_n) with the
/// other agents' actions taken from the batch.
inline double actor_objective(int agent, const Batch& batch, const Team& team) {
  const AgentNets& nets = team.agents[agent];
  const MatrixXd obs_i = batch.joint_obs.middleRows(team.obs_offset(agent), team.obs_dims[agent]);
  MatrixXd actions = batch.actions;
  actions.middleRows(kNumActions * agent, kNumActions) = nn::forward_batch(nets.actor, obs_i).output;
  const MatrixXd q = nn::forward_batch(nets.critic, stack_rows(batch.joint_obs, actions)).output;
  return q.sum() / static_cast<double>(batch.size());
}

/// The quantity the actor step ascends: actor_objective minus
/// logit_penalty * (1/N) sum ||logits||^2. The penalty keeps the softmax away
/// from saturation, where its Jacobian (and hence the policy gradient) vanishes.
inline double actor_surrogate(int agent, const Batch& batch, const Team& team, double logit_penalty) {
  const AgentNets& nets = team.agents[agent];
  const MatrixXd obs_i = batch.joint_obs.middleRows(team.obs_offset(agent), team.obs_dims[agent]);
  const double reg = nn::forward_batch(nets.actor, obs_i).logits.squaredNorm() / static_cast<double>(batch.size());
  return actor_objective(agent, batch, team) - logit_penalty * reg;
}

/// Gradient of actor_surrogate w.r.t. the actor parameters. Other agents'
/// action slots stay at their batch values.
inline nn::GradientBundle actor_surrogate_gradient(int agent, const Batch& batch, const Team& team,
                                                   double logit_penalty, double* objective = nullptr) {
  const AgentNets& nets = team.agents[agent];
  const double N = static_cast<double>(batch.size());
  const MatrixXd obs_i = batch.joint_obs.middleRows(team.obs_offset(agent), team.obs_dims[agent]);
  const nn::ForwardCache actor_cache = nn::forward_batch(nets.actor, obs_i);
  MatrixXd actions = batch.actions;
  actions.middleRows(kNumActions * agent, kNumActions) = actor_cache.output;
  const nn::ForwardCache critic_cache = nn::forward_batch(nets.critic, stack_rows(batch.joint_obs, actions));
  if (objective) *objective = critic_cache.output.sum() / N;
  const MatrixXd ones = MatrixXd::Constant(1, batch.size(), 1.0 / N);
  const nn::BackwardResult critic_back = nn::backward_batch(nets.critic, critic_cache, ones);
  const MatrixXd dj_daction = critic_back.input_grad.middleRows(team.action_offset(agent), kNumActions);
  const MatrixXd dreg_dlogits = (-2.0 * logit_penalty / N) * actor_cache.logits;
  return nn::backward_batch(nets.actor, actor_cache, dj_daction, &dreg_dlogits).grads;
}

/// One ascent step on the actor surrogate. Returns the pre-step objective J.
inline UpdateStats actor_update(int agent, const Batch& batch, Team& team, const TrainConfig& config) {
  require(batch.size() > 0, ErrorKind::input, "actor_update: empty minibatch");
  UpdateStats s;
  nn::GradientBundle g = actor_surrogate_gradient(agent, batch, team, config.logit_penalty, &s.value);
  if (!std::isfinite(s.value))
    fail(ErrorKind::diverged, "actor objective of agent " + std::to_string(agent + 1) + " is not finite");
  g.scale(-1.0);
  AgentNets& nets = team.agents[agent];
  s.grad_norm = nn::clip_and_apply(nets.actor_opt, nets.actor, std::move(g), config.max_grad_norm);
  return s;
}

/// Critic then actor for each agent in index order, then one soft target sync.
inline std::vector<std::pair<UpdateStats, UpdateStats>> update_round(Team& team, const Batch& batch,
                                                                     const TrainConfig& config) {
  const MatrixXd next_actions = target_actions(team, batch.next_joint_obs);
  std::vector<std::pair<UpdateStats, UpdateStats>> stats;
  for (int i = 0; i < team.num_agents(); ++i) {
    const VectorXd y = td_targets(team, i, batch, config.gamma, next_actions);
    const UpdateStats c = critic_update(i, batch, y, team, config);
    const UpdateStats a = actor_update(i, batch, team, config);
    stats.emplace_back(c, a);
  }
  sync_targets(team, config.tau);
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointSchema = 1;

struct Checkpoint {
  world::ScenarioId scenario_id = world::ScenarioId::A;
  std::uint64_t seed = 0;
  int episode = 0;
  TrainConfig config;
  Team team;
};

inline nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : c.team.agents) {
    agents.push_back({{"actor", nn::to_json(a.actor)},
                      {"critic", nn::to_json(a.critic)},
                      {"actor_target", nn::to_json(a.actor_target)},
                      {"critic_target", nn::to_json(a.critic_target)}});
  }
  return {{"schema_version", kCheckpointSchema},
          {"scenario_id", world::to_string(c.scenario_id)},
          {"seed", c.seed},
          {"episode", c.episode},
          {"hyperparameters", to_json(c.config)},
          {"obs_dims", c.team.obs_dims},
          {"agents", std::move(agents)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    require(j.at("schema_version").get<int>() == kCheckpointSchema, ErrorKind::incompatibility,
            "checkpoint: unsupported schema_version");
    Checkpoint c;
    c.scenario_id = world::parse_scenario(j.at("scenario_id").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.episode = j.at("episode").get<int>();
    c.config = merge_config(TrainConfig{}, j.at("hyperparameters"));
    c.team.obs_dims = j.at("obs_dims").get<std::vector<int>>();
    for (const auto& a : j.at("agents")) {
      AgentNets nets;
      nets.actor = nn::mlp_from_json(a.at("actor"));
      nets.critic = nn::mlp_from_json(a.at("critic"));
      nets.actor_target = nn::mlp_from_json(a.at("actor_target"));
      nets.critic_target = nn::mlp_from_json(a.at("critic_target"));
      nets.actor_opt = nn::OptimizerState::for_params(nets.actor, c.config.lr_actor);
      nets.critic_opt = nn::OptimizerState::for_params(nets.critic, c.config.lr_critic);
      c.team.agents.push_back(std::move(nets));
    }
    require(c.team.agents.size() == c.team.obs_dims.size(), ErrorKind::incompatibility,
            "checkpoint: obs_dims disagrees with agent count");
    for (std::size_t i = 0; i < c.team.agents.size(); ++i) {
      const auto& a = c.team.agents[i];
      require(a.actor.input_dim() == c.team.obs_dims[i] && a.actor.output_dim() == kNumActions &&
                  a.critic.input_dim() == c.team.critic_input_dim() && a.critic.output_dim() == 1,
              ErrorKind::incompatibility, "checkpoint: network shapes disagree with obs_dims");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::incompatibility, std::string("checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Rollouts

struct Trajectory {
  world::ScenarioId scenario_id = world::ScenarioId::A;
  std::vector<world::WorldState> states;               // T + 1 states, [0] is the reset state
  std::vector<std::vector<VectorXd>> joint_obs;        // T, observations the actions were chosen from
  std::vector<std::vector<OneHot>> relaxed_actions;    // T
  std::vector<std::vector<OneHot>> executed_actions;   // T
  std::vector<std::vector<double>> rewards;            // T
  std::vector<std::vector<world::RewardBreakdown>> breakdowns;  // T

  int length() const { return static_cast<int>(joint_obs.size()); }
  bool reached_goal() const {
    return !states.empty() && states.back().done_reason == world::DoneReason::goal;
  }
  double total_reward() const {
    double s = 0.0;
    for (const auto& r : rewards)
      for (double x : r) s += x;
    return s;
  }
};

inline void check_actors(std::span<const MlpParams> actors, const world::ScenarioConfig& config) {
  const world::ObservationLayout layout(config);
  require(static_cast<int>(actors.size()) == config.num_agents(), ErrorKind::incompatibility,
          "actor count does not match the scenario's agent count");
  for (const auto& a : actors) {
    require(a.input_dim() == layout.total_dim() && a.output_dim() == kNumActions, ErrorKind::incompatibility,
            "actor expects " + std::to_string(a.input_dim()) + "-dim observations, scenario " +
                world::to_string(config.scenario_id) + " produces " + std::to_string(layout.total_dim()));
  }
}

/// Decentralised execution: each agent acts from its own observation through
/// its own actor only. Greedy mode ignores `epsilon` and `seed`.
inline Trajectory rollout(std::span<const MlpParams> actors, const world::ScenarioConfig& config,
                          ActMode mode = ActMode::greedy, double epsilon = 0.0, std::uint64_t seed = 0,
                          int max_steps = -1) {
  check_actors(actors, config);
  const int n = config.num_agents();
  const int limit = max_steps > 0 ? std::min(max_steps, config.max_steps) : config.max_steps;
  Rng rng(seed);
  Trajectory t;
  t.scenario_id = config.scenario_id;
  t.states.push_back(world::reset(config, seed));
  while (!t.states.back().done && t.length() < limit) {
    const world::WorldState& s = t.states.back();
    std::vector<VectorXd> obs = world::observe_all(s, config);
    std::vector<OneHot> relaxed(n), executed(n);
    for (int i = 0; i < n; ++i) {
      const ActionChoice a = select_action(actors[i], obs[i], mode, epsilon, rng);
      relaxed[i] = a.relaxed;
      executed[i] = a.executed;
    }
    world::StepOutcome out = world::step(s, executed, config);
    t.joint_obs.push_back(std::move(obs));
    t.relaxed_actions.push_back(std::move(relaxed));
    t.executed_actions.push_back(std::move(executed));
    t.rewards.push_back(out.rewards);
    t.breakdowns.push_back(out.reward_breakdown);
    t.states.push_back(std::move(out.next_state));
  }
  return t;
}

inline Trajectory rollout(const Checkpoint& checkpoint, const world::ScenarioConfig& config) {
  require(checkpoint.scenario_id == config.scenario_id, ErrorKind::incompatibility,
          "checkpoint was trained on scenario " + world::to_string(checkpoint.scenario_id) +
              ", not " + world::to_string(config.scenario_id));
  const auto actors = checkpoint.team.actors();
  return rollout(actors, config);
}

// ---------------------------------------------------------------------------
// Training loop

/// Trailing mean over the last `window` entries (fewer at the start).
inline std::vector<double> moving_average(std::span<const double> xs, int window) {
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    acc += xs[k];
    if (k >= static_cast<std::size_t>(window)) acc -= xs[k - window];
    out[k] = acc / static_cast<double>(std::min<std::size_t>(k + 1, window));
  }
  return out;
}

inline constexpr int kSmoothingWindow = 100;

struct EpisodeRecord {
  int episode = 0;
  double total_reward = 0.0;
  int length = 0;
  bool reached_goal = false;
};

struct TrainResult {
  std::vector<EpisodeRecord> episodes;
  long env_steps = 0;
  long update_rounds = 0;
  double max_post_clip_norm = 0.0;  // largest gradient norm actually applied
  Checkpoint final_checkpoint;

  std::vector<double> rewards() const {
    std::vector<double> r;
    for (const auto& e : episodes) r.push_back(e.total_reward);
    return r;
  }
  std::vector<double> smoothed_rewards() const { return moving_average(rewards(), kSmoothingWindow); }
};

/// Called with (episode number counted from 1, checkpoint) every
/// checkpoint_every episodes and once more at the end of training.
using CheckpointSink = std::function<void(const Checkpoint&)>;
using EpisodeSink = std::function<void(const EpisodeRecord&)>;

class Trainer {
 public:
  Trainer(world::ScenarioConfig scenario, TrainConfig config)
      : scenario_(std::move(scenario)),
        config_(config),
        buffer_(static_cast<std::size_t>(config.memory_size)),
        explore_rng_(mix_seed(config.seed, 1000)),
        sample_rng_(mix_seed(config.seed, 1001)) {
    validate(config_);
    scenario_.physics.force = config_.action_force;
    scenario_.max_steps = config_.max_episode_length;
    world::validate(scenario_);
    const world::ObservationLayout layout(scenario_);
    team_ = make_team(std::vector<int>(scenario_.num_agents(), layout.total_dim()), config_);
  }

  const Team& team() const { return team_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const world::ScenarioConfig& scenario() const { return scenario_; }

  Checkpoint checkpoint(int episode) const {
    return {scenario_.scenario_id, config_.seed, episode, config_, team_};
  }

  TrainResult run(const CheckpointSink& on_checkpoint = {}, const EpisodeSink& on_episode = {}) {
    TrainResult result;
    const int n = scenario_.num_agents();
    for (int ep = 0; ep < config_.max_episodes; ++ep) {
      const double eps = epsilon_at(config_, ep);
      world::WorldState s = world::reset(scenario_, config_.seed);
      std::vector<VectorXd> obs = world::observe_all(s, scenario_);
      EpisodeRecord rec;
      rec.episode = ep + 1;
      while (!s.done) {
        Transition t;
        t.joint_obs = obs;
        for (int i = 0; i < n; ++i) {
          const ActionChoice a = select_action(team_.agents[i].actor, obs[i], ActMode::explore, eps, explore_rng_);
          t.relaxed_action.push_back(a.relaxed);
          t.executed_action.push_back(a.executed);
        }
        world::StepOutcome out = world::step(s, t.executed_action, scenario_);
        s = std::move(out.next_state);
        obs = world::observe_all(s, scenario_);
        t.rewards = out.rewards;
        t.next_joint_obs = obs;
        // Only reaching the goal ends the return; timeouts still bootstrap.
        t.done = s.done_reason == world::DoneReason::goal;
        for (double r : out.rewards) rec.total_reward += r;
        buffer_.push(std::move(t));
        ++rec.length;
        ++result.env_steps;

        if (result.env_steps > config_.learning_start_step &&
            result.env_steps % config_.learning_frequency == 0 &&
            buffer_.can_sample(static_cast<std::size_t>(config_.batch_size))) {
          const auto idx = buffer_.sample_indices(static_cast<std::size_t>(config_.batch_size), sample_rng_);
          const Batch batch = make_batch(team_, buffer_, idx);
          try {
            for (const auto& [c, a] : update_round(team_, batch, config_)) {
              result.max_post_clip_norm = std::max({result.max_post_clip_norm, std::min(c.grad_norm, config_.max_grad_norm),
                                                    std::min(a.grad_norm, config_.max_grad_norm)});
            }
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::diverged) throw;
            fail(ErrorKind::diverged, std::string(e.what()) + " (episode " + std::to_string(ep + 1) +
                                          ", env step " + std::to_string(result.env_steps) + ")");
          }
          ++result.update_rounds;
        }
      }
      rec.reached_goal = s.done_reason == world::DoneReason::goal;
      result.episodes.push_back(rec);
      if (on_episode) on_episode(rec);
      const bool periodic = config_.checkpoint_every > 0 && (ep + 1) % config_.checkpoint_every == 0;
      if (on_checkpoint && periodic && ep + 1 != config_.max_episodes) on_checkpoint(checkpoint(ep + 1));
    }
    result.final_checkpoint = checkpoint(config_.max_episodes);
    if (on_checkpoint) on_checkpoint(result.final_checkpoint);
    return result;
  }

 private:
  world::ScenarioConfig scenario_;
  TrainConfig config_;
  Team team_;
  ReplayBuffer buffer_;
  Rng explore_rng_;
  Rng sample_rng_;
};

inline TrainResult train(world::ScenarioId scenario, const TrainConfig& config,
                         const CheckpointSink& on_checkpoint = {}, const EpisodeSink& on_episode = {}) {
  Trainer trainer(world::build_scenario(scenario), config);
  return trainer.run(on_checkpoint, on_episode);
}

/// The scenario geometry a checkpoint was trained against, including its action force.
inline world::ScenarioConfig scenario_for(const Checkpoint& c) {
  world::ScenarioConfig s = world::build_scenario(c.scenario_id);
  s.physics.force = c.config.action_force;
  s.max_steps = c.config.max_episode_length;
  return s;
}

}  // namespace hlab::maddpg
