#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls the reverse pass under test.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "hlab/maddpg.hpp"
#include "hlab/mlp.hpp"
#include "hlab/random.hpp"

namespace hlab::testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// ||a - b|| / max(||a||, ||b||), with a floor so that two near-zero
/// quantities compare as equal.
inline double rel_error(const MatrixXd& a, const MatrixXd& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

inline double rel_error(const nn::GradientBundle& a, const nn::GradientBundle& b, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    diff += (a.layers[k].weight - b.layers[k].weight).squaredNorm() + (a.layers[k].bias - b.layers[k].bias).squaredNorm();
    na += a.layers[k].weight.squaredNorm() + a.layers[k].bias.squaredNorm();
    nb += b.layers[k].weight.squaredNorm() + b.layers[k].bias.squaredNorm();
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Plain scalar evaluation of the network, one neuron at a time.
inline VectorXd reference_forward(const nn::MlpParams& p, const VectorXd& x) {
  std::vector<double> a(x.data(), x.data() + x.size());
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    const auto& l = p.layers[k];
    std::vector<double> z(static_cast<std::size_t>(l.weight.rows()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      double s = l.bias(r);
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) s += l.weight(r, c) * a[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = (k + 1 < p.layers.size()) ? std::max(s, 0.0) : s;
    }
    a = std::move(z);
  }
  VectorXd out = Eigen::Map<VectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
  if (p.head == nn::Head::softmax) {
    const double m = out.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < out.size(); ++k) sum += std::exp(out(k) - m);
    for (Eigen::Index k = 0; k < out.size(); ++k) out(k) = std::exp(out(k) - m) / sum;
  }
  return out;
}

/// Central differences of a scalar function of the parameters, h = 1e-5 by default.
inline nn::GradientBundle fd_param_gradient(nn::MlpParams p, const std::function<double(const nn::MlpParams&)>& f,
                                            double h = 1e-5) {
  nn::GradientBundle g;
  g.layers = nn::zeros_like(p.layers);
  auto probe = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double up = f(p);
    slot = saved - h;
    const double down = f(p);
    slot = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    auto& l = p.layers[k];
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) g.layers[k].weight(r, c) = probe(l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) g.layers[k].bias(r) = probe(l.bias(r));
  }
  return g;
}

/// Central-difference Jacobian of the network output with respect to its input.
inline MatrixXd fd_input_jacobian(const nn::MlpParams& p, const VectorXd& x, double h = 1e-5) {
  MatrixXd j(p.output_dim(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    VectorXd up = x, down = x;
    up(c) += h;
    down(c) -= h;
    j.col(c) = (reference_forward(p, up) - reference_forward(p, down)) / (2.0 * h);
  }
  return j;
}

inline VectorXd random_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v(k) = rng.uniform(-scale, scale);
  return v;
}

/// Randomizes every weight and bias so that gradients are not dominated by
/// the small fan-in initialization.
inline nn::MlpParams random_net(std::initializer_list<int> sizes, nn::Head head, std::uint64_t seed, double scale = 1.0) {
  nn::MlpParams p = nn::init_params(sizes, head, seed);
  Rng rng(seed ^ 0xABCDEFULL);
  for (auto& l : p.layers) {
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = rng.uniform(-scale, scale);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias(k) = rng.uniform(-scale, scale);
  }
  return p;
}

/// Small team with random transitions for trainer-level tests.
inline maddpg::Team small_team(std::vector<int> obs_dims, std::uint64_t seed, int hidden = 6) {
  maddpg::TrainConfig c;
  c.hidden1 = hidden;
  c.hidden2 = hidden;
  c.seed = seed;
  return maddpg::make_team(obs_dims, c);
}

inline std::vector<maddpg::Transition> random_transitions(const maddpg::Team& team, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<maddpg::Transition> out;
  for (int k = 0; k < count; ++k) {
    maddpg::Transition t;
    for (int i = 0; i < team.num_agents(); ++i) {
      t.joint_obs.push_back(random_vector(rng, team.obs_dims[i]));
      t.next_joint_obs.push_back(random_vector(rng, team.obs_dims[i]));
      const int a = static_cast<int>(rng.below(world::kNumActions));
      t.executed_action.push_back(world::one_hot(a));
      t.relaxed_action.push_back(world::one_hot(a));
      t.rewards.push_back(rng.uniform(-5.0, 5.0));
    }
    t.done = rng.uniform() < 0.2;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace hlab::testing
