// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multilayer perceptron with analytic backpropagation.
//
// Layer l computes a_{l+1} = act(W_l a_l + b_l); the last layer has no
// activation and produces logits. Hidden activations default to ReLU with a
// zero subgradient at the kink.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedcompress/error.hpp"
#include "fedcompress/matrix.hpp"
#include "fedcompress/random.hpp"

namespace fedcompress {

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weight;             // out x in
  std::vector<double> bias;  // out entries, or empty for a bias-free layer

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Ordered dense layers plus one activation tag per hidden layer.
struct ModelWeights {
  std::vector<DenseLayer> layers;
  std::vector<Activation> activations;  // layers.size() - 1 entries

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d;
    if (layers.empty()) return d;
    d.push_back(input_dim());
    for (const auto& l : layers) d.push_back(l.out_dim());
    return d;
  }

  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size();
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.all_finite()) return false;
      for (double b : l.bias)
        if (!std::isfinite(b)) return false;
    }
    return true;
  }

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

inline void validate(const ModelWeights& model) {
  if (model.layers.empty()) throw InvalidInput("model has no layers");
  if (model.activations.size() + 1 != model.layers.size()) {
    throw InvalidInput("model needs one activation tag per hidden layer");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (l.weight.empty()) throw InvalidInput("layer " + std::to_string(i) + " has an empty weight matrix");
    if (!l.bias.empty() && l.bias.size() != l.out_dim()) {
      throw InvalidInput("layer " + std::to_string(i) + " bias length does not match its output width");
    }
    if (i + 1 < model.layers.size() && l.out_dim() != model.layers[i + 1].in_dim()) {
      throw InvalidInput("layer " + std::to_string(i) + " output width " + std::to_string(l.out_dim()) +
                         " does not feed layer " + std::to_string(i + 1) + " input width " +
                         std::to_string(model.layers[i + 1].in_dim()));
    }
  }
}

inline bool same_shape(const ModelWeights& a, const ModelWeights& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() || x.bias.size() != y.bias.size())
      return false;
  }
  return true;
}

/// Zero-valued model with the same architecture as `like`.
inline ModelWeights zeros_like(const ModelWeights& like) {
  ModelWeights z = like;
  for (auto& l : z.layers) {
    std::fill(l.weight.values().begin(), l.weight.values().end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  return z;
}

/// Fan-based uniform initialisation in [-sqrt(6/(in+out)), +sqrt(6/(in+out))]; biases zero.
inline ModelWeights make_mlp(std::span<const std::size_t> dims, std::uint64_t seed,
                             Activation hidden = Activation::relu, bool with_bias = true) {
  if (dims.size() < 2) throw InvalidInput("an MLP needs at least input and output widths");
  for (auto d : dims)
    if (d == 0) throw InvalidInput("layer widths must be positive");
  Rng rng(seed);
  ModelWeights m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t in = dims[i];
    const std::size_t out = dims[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer{Matrix(out, in), with_bias ? std::vector<double>(out, 0.0) : std::vector<double>{}};
    for (auto& w : layer.weight.values()) w = rng.uniform(-limit, limit);
    m.layers.push_back(std::move(layer));
    if (i + 2 < dims.size()) m.activations.push_back(hidden);
  }
  return m;
}

inline ModelWeights make_mlp(std::initializer_list<std::size_t> dims, std::uint64_t seed,
                             Activation hidden = Activation::relu, bool with_bias = true) {
  std::vector<std::size_t> d(dims);
  return make_mlp(std::span<const std::size_t>(d), seed, hidden, with_bias);
}

/// Inputs plus optional labels. Unlabeled and OOD data carry no labels.
struct Batch {
  Matrix inputs;
  std::optional<std::vector<std::size_t>> labels;

  std::size_t size() const noexcept { return inputs.rows(); }
};

struct TrainConfig {
  double lr_client = 0.1;
  double lr_server = 0.02;
  int epochs_client = 10;
  int epochs_server = 10;
  int batch_size = 8;
  double beta_client = 0.2;
  double beta_server = 2.0;
  int beta_warmup_epochs = 2;
  double temperature = 3.0;

  void validate() const {
    if (!(lr_client > 0.0)) throw InvalidInput("train.lr_client must be positive");
    if (!(lr_server > 0.0)) throw InvalidInput("train.lr_server must be positive");
    if (epochs_client < 1) throw InvalidInput("train.epochs_client must be at least 1");
    if (epochs_server < 0) throw InvalidInput("train.epochs_server must be non-negative");
    if (batch_size < 1) throw InvalidInput("train.batch_size must be at least 1");
    if (!(beta_client >= 0.0)) throw InvalidInput("train.beta_client must be non-negative");
    if (!(beta_server >= 0.0)) throw InvalidInput("train.beta_server must be non-negative");
    if (beta_warmup_epochs < 0 || beta_warmup_epochs >= epochs_client) {
      throw InvalidInput("train.beta_warmup_epochs must lie in [0, train.epochs_client)");
    }
    if (!(temperature > 0.0)) throw InvalidInput("train.temperature must be positive");
  }
};

/// Per-layer inputs and pre-activations recorded by `forward`.
struct ForwardCache {
  std::vector<Matrix> inputs;    // inputs[l] feeds layer l
  std::vector<Matrix> preacts;   // W_l a_l + b_l
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

namespace detail {

inline Matrix affine(const DenseLayer& layer, const Matrix& x) {
  const std::size_t n = x.rows();
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  Matrix z(n, out);
  for (std::size_t s = 0; s < n; ++s) {
    auto xs = x.row(s);
    auto zs = z.row(s);
    for (std::size_t o = 0; o < out; ++o) {
      auto w = layer.weight.row(o);
      double acc = layer.bias.empty() ? 0.0 : layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * xs[i];
      zs[o] = acc;
    }
  }
  return z;
}

inline Matrix activate(const Matrix& z, Activation act) {
  if (act == Activation::identity) return z;
  Matrix a = z;
  for (auto& v : a.values()) v = v > 0.0 ? v : 0.0;
  return a;
}

inline void check_input(const ModelWeights& model, const Matrix& inputs) {
  if (model.layers.empty()) throw InvalidInput("model has no layers");
  if (inputs.cols() != model.input_dim()) {
    throw InvalidInput("input width " + std::to_string(inputs.cols()) + " does not match model input dim " +
                       std::to_string(model.input_dim()));
  }
  if (inputs.rows() == 0) throw InvalidInput("batch is empty");
  if (!inputs.all_finite()) throw InvalidInput("batch contains non-finite inputs");
}

}  // namespace detail

inline ForwardResult forward(const ModelWeights& model, const Matrix& inputs) {
  detail::check_input(model, inputs);
  ForwardResult r;
  Matrix a = inputs;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Matrix z = detail::affine(model.layers[l], a);
    r.cache.inputs.push_back(std::move(a));
    if (l + 1 < model.layers.size()) {
      a = detail::activate(z, model.activations[l]);
    } else {
      r.logits = z;
    }
    r.cache.preacts.push_back(std::move(z));
  }
  return r;
}

inline Matrix logits(const ModelWeights& model, const Matrix& inputs) { return forward(model, inputs).logits; }

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits, double temperature = 1.0) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto out = p.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) sum += (out[c] = std::exp((in[c] - mx) / temperature));
    for (auto& v : out) v /= sum;
  }
  return p;
}

/// Gradient of a scalar loss with respect to every parameter, given dLoss/dlogits.
inline ModelWeights backward(const ModelWeights& model, const ForwardCache& cache, const Matrix& dlogits) {
  const std::size_t depth = model.layers.size();
  if (cache.inputs.size() != depth || cache.preacts.size() != depth) {
    throw ContractViolation("forward cache does not match the model depth");
  }
  if (dlogits.rows() != cache.inputs.front().rows() || dlogits.cols() != model.output_dim()) {
    throw ContractViolation("logit gradient shape does not match the forward pass");
  }
  ModelWeights grads = zeros_like(model);
  Matrix delta = dlogits;  // dLoss/dpreact of the current layer
  for (std::size_t li = depth; li-- > 0;) {
    const auto& layer = model.layers[li];
    const Matrix& x = cache.inputs[li];
    auto& g = grads.layers[li];
    for (std::size_t s = 0; s < x.rows(); ++s) {
      auto ds = delta.row(s);
      auto xs = x.row(s);
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const double d = ds[o];
        if (d == 0.0) continue;
        auto gw = g.weight.row(o);
        for (std::size_t i = 0; i < layer.in_dim(); ++i) gw[i] += d * xs[i];
        if (!g.bias.empty()) g.bias[o] += d;
      }
    }
    if (li == 0) break;
    Matrix prev(x.rows(), layer.in_dim());
    const Matrix& zprev = cache.preacts[li - 1];
    const Activation act = model.activations[li - 1];
    for (std::size_t s = 0; s < x.rows(); ++s) {
      auto ds = delta.row(s);
      auto ps = prev.row(s);
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const double d = ds[o];
        if (d == 0.0) continue;
        auto w = layer.weight.row(o);
        for (std::size_t i = 0; i < layer.in_dim(); ++i) ps[i] += d * w[i];
      }
      if (act == Activation::relu) {
        for (std::size_t i = 0; i < ps.size(); ++i)
          if (!(zprev(s, i) > 0.0)) ps[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return grads;
}

struct LossAndGrads {
  double loss = 0.0;
  ModelWeights grads;
};

/// Mean cross-entropy over the batch and its gradient.
inline double cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) throw ContractViolation("label count does not match batch size");
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    if (labels[r] >= z.size()) throw InvalidInput("label index out of range");
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    loss += std::log(sum) + mx - z[labels[r]];
  }
  return loss / static_cast<double>(logits.rows());
}

inline LossAndGrads backward_ce(const ModelWeights& model, const ForwardResult& fwd,
                                const std::optional<std::vector<std::size_t>>& labels) {
  if (!labels) throw ContractViolation("cross-entropy needs labels; batch is unlabeled");
  const Matrix& z = fwd.logits;
  LossAndGrads out;
  out.loss = cross_entropy(z, *labels);
  Matrix d = softmax_rows(z);
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    d(r, (*labels)[r]) -= 1.0;
    for (auto& v : d.row(r)) v *= inv_n;
  }
  out.grads = backward(model, fwd.cache, d);
  return out;
}

/// w' = w - lr * g, elementwise.
inline ModelWeights sgd_step(ModelWeights weights, const ModelWeights& grads, double lr) {
  if (!same_shape(weights, grads)) throw InvalidInput("sgd_step: gradient shape does not match weights");
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    auto w = weights.layers[l].weight.values();
    auto g = grads.layers[l].weight.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    auto& b = weights.layers[l].bias;
    const auto& gb = grads.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
  }
  return weights;
}

/// a += scale * b, for gradient accumulation.
inline void axpy(ModelWeights& a, const ModelWeights& b, double scale) {
  if (!same_shape(a, b)) throw InvalidInput("axpy: shapes differ");
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto x = a.layers[l].weight.values();
    auto y = b.layers[l].weight.values();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += scale * y[i];
    for (std::size_t i = 0; i < a.layers[l].bias.size(); ++i) a.layers[l].bias[i] += scale * b.layers[l].bias[i];
  }
}

/// Post-activation output of the last hidden layer.
inline Matrix penultimate_embeddings(const ModelWeights& model, const Matrix& inputs) {
  if (model.layers.size() < 2) throw UnsupportedArchitecture("model has no hidden layer to embed with");
  detail::check_input(model, inputs);
  Matrix a = inputs;
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    a = detail::activate(detail::affine(model.layers[l], a), model.activations[l]);
  }
  return a;
}

inline std::vector<std::size_t> predict(const ModelWeights& model, const Matrix& inputs) {
  const Matrix z = logits(model, inputs);
  std::vector<std::size_t> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline double accuracy(const ModelWeights& model, const Matrix& inputs, std::span<const std::size_t> labels) {
  if (labels.size() != inputs.rows()) throw ContractViolation("label count does not match batch size");
  const auto pred = predict(model, inputs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Parameters in layer order: weights row-major, then biases.
inline std::vector<double> flatten(const ModelWeights& m) {
  std::vector<double> v;
  v.reserve(m.parameter_count());
  for (const auto& l : m.layers) {
    v.insert(v.end(), l.weight.values().begin(), l.weight.values().end());
    v.insert(v.end(), l.bias.begin(), l.bias.end());
  }
  return v;
}

inline ModelWeights unflatten(std::span<const double> values, const ModelWeights& like) {
  if (values.size() != like.parameter_count()) throw InvalidInput("parameter vector length does not match model");
  ModelWeights m = like;
  std::size_t k = 0;
  for (auto& l : m.layers) {
    for (auto& w : l.weight.values()) w = values[k++];
    for (auto& b : l.bias) b = values[k++];
  }
  return m;
}

/// Max over parameters of |analytic - central difference| / (|central difference| + 1e-8).
template <typename LossFn>
double finite_diff_check(LossFn&& loss_fn, std::vector<double> params, std::span<const double> analytic,
                         double step = 1e-5) {
  if (analytic.size() != params.size()) throw InvalidInput("analytic gradient length does not match parameters");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss_fn(std::as_const(params));
    params[i] = saved - step;
    const double down = loss_fn(std::as_const(params));
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
  }
  return worst;
}

/// Model-typed overload: `loss_fn(const ModelWeights&) -> double`.
template <typename LossFn>
double finite_diff_check(LossFn&& loss_fn, const ModelWeights& weights, const ModelWeights& analytic,
                         double step = 1e-5) {
  const auto g = flatten(analytic);
  return finite_diff_check([&](const std::vector<double>& p) { return loss_fn(unflatten(p, weights)); },
                           flatten(weights), g, step);
}

}  // namespace fedcompress
