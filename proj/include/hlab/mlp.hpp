#pragma once

// Dense feed-forward networks with hand-written reverse-mode differentiation.
//
// A network is a chain of affine layers with ReLU between them and an optional
// softmax on the output. Batched evaluation stores samples as matrix columns.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlab/error.hpp"
#include "hlab/random.hpp"

namespace hlab::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Head { linear, softmax };

inline const char* to_string(Head head) {
  return head == Head::softmax ? "softmax" : "linear";
}

inline Head parse_head(const std::string& s) {
  if (s == "linear") return Head::linear;
  if (s == "softmax") return Head::softmax;
  fail(ErrorKind::configuration, "unknown output head '" + s + "'");
}

/// Hidden widths used for every actor and critic unless overridden.
inline constexpr int kHidden1 = 128;
inline constexpr int kHidden2 = 64;

struct Layer {
  MatrixXd weight;  // out x in
  VectorXd bias;    // out
};

struct MlpParams {
  std::vector<Layer> layers;
  Head head = Head::linear;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

  std::vector<int> layer_sizes() const {
    std::vector<int> sizes{input_dim()};
    for (const auto& l : layers) sizes.push_back(static_cast<int>(l.weight.rows()));
    return sizes;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }
};

inline bool same_shape(const std::vector<Layer>& a, const std::vector<Layer>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].weight.rows() != b[k].weight.rows() ||
        a[k].weight.cols() != b[k].weight.cols() ||
        a[k].bias.size() != b[k].bias.size())
      return false;
  }
  return true;
}

inline std::vector<Layer> zeros_like(const std::vector<Layer>& layers) {
  std::vector<Layer> out;
  out.reserve(layers.size());
  for (const auto& l : layers)
    out.push_back({MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                   VectorXd::Zero(l.bias.size())});
  return out;
}

/// Euclidean distance between two equally shaped parameter sets, over all entries.
inline double distance(const MlpParams& a, const MlpParams& b) {
  require(same_shape(a.layers, b.layers), ErrorKind::input, "distance: shape mismatch");
  double sq = 0.0;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    sq += (a.layers[k].weight - b.layers[k].weight).squaredNorm();
    sq += (a.layers[k].bias - b.layers[k].bias).squaredNorm();
  }
  return std::sqrt(sq);
}

/// Fan-in scaled uniform initialisation: every weight and bias of a layer with
/// fan-in m is drawn from U(-1/sqrt(m), 1/sqrt(m)). Draw order is row-major
/// weights then biases, layer by layer, so a seed fixes the network exactly.
inline MlpParams init_params(std::span<const int> sizes, Head head, std::uint64_t seed) {
  require(sizes.size() >= 2, ErrorKind::input, "init_params: need at least input and output size");
  for (int s : sizes) require(s > 0, ErrorKind::input, "init_params: layer sizes must be positive");
  Rng rng(seed);
  MlpParams p;
  p.head = head;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const int in = sizes[k];
    const int out = sizes[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer l{MatrixXd(out, in), VectorXd(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    for (int r = 0; r < out; ++r) l.bias(r) = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline MlpParams init_params(std::initializer_list<int> sizes, Head head, std::uint64_t seed) {
  return init_params(std::span<const int>(sizes.begin(), sizes.size()), head, seed);
}

/// Column-wise softmax with max subtraction.
inline MatrixXd softmax_columns(const MatrixXd& logits) {
  MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - m).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

inline VectorXd softmax(const VectorXd& logits) { return softmax_columns(logits); }

struct ForwardCache {
  std::vector<MatrixXd> activations;  // input to each layer; [0] is the network input
  MatrixXd logits;                    // pre-head output
  MatrixXd output;                    // after the head
};

inline ForwardCache forward_batch(const MlpParams& params, const MatrixXd& inputs) {
  require(inputs.rows() == params.input_dim(), ErrorKind::input,
          "forward: input has " + std::to_string(inputs.rows()) + " rows, network expects " +
              std::to_string(params.input_dim()));
  ForwardCache cache;
  cache.activations.reserve(params.layers.size());
  cache.activations.push_back(inputs);
  const std::size_t last = params.layers.size() - 1;
  for (std::size_t k = 0; k < last; ++k) {
    const Layer& l = params.layers[k];
    MatrixXd z = l.weight * cache.activations.back();
    z.colwise() += l.bias;
    cache.activations.push_back(z.cwiseMax(0.0));
  }
  cache.logits = params.layers[last].weight * cache.activations.back();
  cache.logits.colwise() += params.layers[last].bias;
  cache.output = params.head == Head::softmax ? softmax_columns(cache.logits) : cache.logits;
  return cache;
}

inline VectorXd forward(const MlpParams& params, const VectorXd& input) {
  return forward_batch(params, input).output.col(0);
}

/// Raw output-layer values, i.e. before the softmax head.
inline VectorXd logits(const MlpParams& params, const VectorXd& input) {
  return forward_batch(params, input).logits.col(0);
}

struct GradientBundle {
  std::vector<Layer> layers;

  double global_norm() const {
    double sq = 0.0;
    for (const auto& l : layers) sq += l.weight.squaredNorm() + l.bias.squaredNorm();
    return std::sqrt(sq);
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  void scale(double factor) {
    for (auto& l : layers) {
      l.weight *= factor;
      l.bias *= factor;
    }
  }
};

struct BackwardResult {
  GradientBundle grads;  // summed over the batch
  MatrixXd input_grad;   // per-sample gradient w.r.t. the input, one column per sample
};

/// Reverse pass for the scalar sum_c <upstream.col(c), output.col(c)>, plus
/// sum_c <logit_upstream.col(c), logits.col(c)> when `logit_upstream` is given.
inline BackwardResult backward_batch(const MlpParams& params, const ForwardCache& cache,
                                     const MatrixXd& upstream, const MatrixXd* logit_upstream = nullptr) {
  require(upstream.rows() == params.output_dim() && upstream.cols() == cache.output.cols(),
          ErrorKind::input, "backward: upstream gradient shape mismatch");
  MatrixXd delta;
  if (params.head == Head::softmax) {
    // d/dlogits of <g, softmax(z)> = p * (g - <g, p>)
    const MatrixXd& p = cache.output;
    const Eigen::RowVectorXd gp = (upstream.cwiseProduct(p)).colwise().sum();
    delta = p.cwiseProduct(upstream - gp.replicate(p.rows(), 1));
  } else {
    delta = upstream;
  }
  if (logit_upstream) {
    require(logit_upstream->rows() == delta.rows() && logit_upstream->cols() == delta.cols(), ErrorKind::input,
            "backward: logit gradient shape mismatch");
    delta += *logit_upstream;
  }

  BackwardResult result;
  result.grads.layers.resize(params.layers.size());
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const MatrixXd& a = cache.activations[k];
    result.grads.layers[k].weight = delta * a.transpose();
    result.grads.layers[k].bias = delta.rowwise().sum();
    MatrixXd back = params.layers[k].weight.transpose() * delta;
    if (k > 0) {
      delta = back.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    } else {
      result.input_grad = std::move(back);
    }
  }
  return result;
}

inline GradientBundle backward_params(const MlpParams& params, const VectorXd& input,
                                      const VectorXd& upstream) {
  require(upstream.size() == params.output_dim(), ErrorKind::input,
          "backward_params: upstream gradient length mismatch");
  return backward_batch(params, forward_batch(params, input), upstream).grads;
}

/// d output / d input, output_dim x input_dim, through the softmax head when present.
inline MatrixXd input_jacobian(const MlpParams& params, const VectorXd& input) {
  const ForwardCache cache = forward_batch(params, input);
  const int out = params.output_dim();
  MatrixXd g;
  if (params.head == Head::softmax) {
    const VectorXd p = cache.output.col(0);
    g = MatrixXd(p.asDiagonal()) - p * p.transpose();
  } else {
    g = MatrixXd::Identity(out, out);
  }
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    g = g * params.layers[k].weight;
    if (k > 0) {
      const auto mask = (cache.activations[k].col(0).array() > 0.0).cast<double>();
      g = g * mask.matrix().asDiagonal();
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Optimisation

enum class UpdateRule { adam, sgd };

struct OptimizerState {
  UpdateRule rule = UpdateRule::adam;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step_count = 0;
  std::vector<Layer> first_moment;
  std::vector<Layer> second_moment;

  static OptimizerState for_params(const MlpParams& params, double lr,
                                   UpdateRule rule = UpdateRule::adam) {
    OptimizerState s;
    s.rule = rule;
    s.learning_rate = lr;
    s.first_moment = zeros_like(params.layers);
    s.second_moment = zeros_like(params.layers);
    return s;
  }
};

/// Clips `grads` to global norm `max_norm` and takes one descent step.
/// Returns the global norm measured before clipping.
inline double clip_and_apply(OptimizerState& opt, MlpParams& params, GradientBundle grads,
                             double max_norm) {
  require(max_norm > 0.0, ErrorKind::input, "clip_and_apply: max_norm must be positive");
  require(same_shape(params.layers, grads.layers), ErrorKind::input,
          "clip_and_apply: gradient shape mismatch");
  if (!grads.all_finite()) fail(ErrorKind::diverged, "non-finite gradient");
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(max_norm / norm);

  if (opt.rule == UpdateRule::sgd) {
    for (std::size_t k = 0; k < params.layers.size(); ++k) {
      params.layers[k].weight -= opt.learning_rate * grads.layers[k].weight;
      params.layers[k].bias -= opt.learning_rate * grads.layers[k].bias;
    }
    return norm;
  }

  if (opt.first_moment.empty()) {
    opt.first_moment = zeros_like(params.layers);
    opt.second_moment = zeros_like(params.layers);
  }
  ++opt.step_count;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));
  const double step = opt.learning_rate * std::sqrt(c2) / c1;
  const double eps_hat = opt.epsilon * std::sqrt(c2);
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    param.array() -= step * m.array() / (v.array().sqrt() + eps_hat);
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    update(params.layers[k].weight, opt.first_moment[k].weight, opt.second_moment[k].weight,
           grads.layers[k].weight);
    update(params.layers[k].bias, opt.first_moment[k].bias, opt.second_moment[k].bias,
           grads.layers[k].bias);
  }
  return norm;
}

/// target <- tau * online + (1 - tau) * target, entrywise.
inline void soft_update(MlpParams& target, const MlpParams& online, double tau) {
  require(tau > 0.0 && tau <= 1.0, ErrorKind::input, "soft_update: tau must lie in (0, 1]");
  require(same_shape(target.layers, online.layers), ErrorKind::input,
          "soft_update: shape mismatch");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    if (tau == 1.0) {
      target.layers[k] = online.layers[k];
      continue;
    }
    target.layers[k].weight = tau * online.layers[k].weight + (1.0 - tau) * target.layers[k].weight;
    target.layers[k].bias = tau * online.layers[k].bias + (1.0 - tau) * target.layers[k].bias;
  }
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(l.weight.cols()));
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row[static_cast<std::size_t>(c)] = l.weight(r, c);
      w.push_back(std::move(row));
    }
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back({{"weight", std::move(w)}, {"bias", std::move(b)}});
  }
  return {{"layer_sizes", p.layer_sizes()}, {"head", to_string(p.head)}, {"layers", std::move(layers)}};
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
  try {
    MlpParams p;
    p.head = parse_head(j.at("head").get<std::string>());
    const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
    const auto& layers = j.at("layers");
    require(sizes.size() == layers.size() + 1, ErrorKind::configuration,
            "network: layer_sizes disagrees with layer count");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto w = layers[k].at("weight").get<std::vector<std::vector<double>>>();
      const auto b = layers[k].at("bias").get<std::vector<double>>();
      const int out = sizes[k + 1];
      const int in = sizes[k];
      require(static_cast<int>(w.size()) == out && static_cast<int>(b.size()) == out,
              ErrorKind::configuration, "network: layer row count mismatch");
      Layer l{MatrixXd(out, in), VectorXd(out)};
      for (int r = 0; r < out; ++r) {
        require(static_cast<int>(w[r].size()) == in, ErrorKind::configuration,
                "network: layer column count mismatch");
        for (int c = 0; c < in; ++c) l.weight(r, c) = w[r][c];
        l.bias(r) = b[r];
      }
      p.layers.push_back(std::move(l));
    }
    require(!p.layers.empty(), ErrorKind::configuration, "network: no layers");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::configuration, std::string("network: ") + e.what());
  }
}

}  // namespace hlab::nn
