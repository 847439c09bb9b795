#pragma once

// Dense feed-forward networks: the classifier (softmax head) and the
// building block of the autoencoder (identity head).

#include "cdcsde/core.hpp"
#include "cdcsde/models/adam.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace cdcsde::models {

enum class Activation { Identity, Relu, Tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw Error("unknown activation '" + s + "'");
}

enum class Head { Softmax, Identity };

// Per-feature affine input normalization. Empty means identity.
struct Standardizer {
  RowVector mean;
  RowVector inv_scale;

  bool empty() const { return mean.size() == 0; }

  static Standardizer fit(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.inv_scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.mean(j)).square().mean();
      s.inv_scale(j) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return s;
  }

  Matrix apply(const Matrix& x) const {
    if (empty()) return x;
    return ((x.rowwise() - mean).array().rowwise() * inv_scale.array()).matrix();
  }
};

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::Identity;

  Eigen::Index in() const { return weights.cols(); }
  Eigen::Index out() const { return weights.rows(); }
};

struct MlpParams {
  Standardizer input;
  std::vector<DenseLayer> layers;
  Head head = Head::Softmax;
  bool theta_star = false;  // frozen post-training snapshot

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().out(); }

  long parameter_count() const {
    long u = 0;
    for (const auto& l : layers) u += static_cast<long>(l.weights.size() + l.bias.size());
    return u;
  }

  void validate() const {
    if (layers.empty()) throw Error("mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].bias.size() != layers[i].out()) throw DimensionError("mlp: bias size mismatch in layer " + std::to_string(i));
      if (i > 0 && layers[i].in() != layers[i - 1].out())
        throw DimensionError("mlp: layer " + std::to_string(i) + " input " + std::to_string(layers[i].in()) +
                             " does not chain with previous output " + std::to_string(layers[i - 1].out()));
    }
    if (!input.empty() && input.mean.size() != input_dim()) throw DimensionError("mlp: standardizer size mismatch");
  }
};

inline Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::Identity: return z;
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
  }
  return z;
}

// d activation / d z, as a function of z.
inline Matrix activation_derivative(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::Identity: return Matrix::Ones(z.rows(), z.cols());
    case Activation::Relu: return (z.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh: return (1.0 - z.array().tanh().square()).matrix();
  }
  return Matrix::Ones(z.rows(), z.cols());
}

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  const Vector sums = p.rowwise().sum();
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= sums(i);
  return p;
}

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer (after standardization for layer 0)
  std::vector<Matrix> pre;     // pre-activations
  Matrix output;               // head applied to the last layer
};

inline ForwardCache forward(const MlpParams& net, const Matrix& x) {
  if (x.cols() != net.input_dim())
    throw DimensionError("mlp: input has " + std::to_string(x.cols()) + " features, model expects " +
                         std::to_string(net.input_dim()));
  ForwardCache c;
  Matrix a = net.input.apply(x);
  for (const auto& layer : net.layers) {
    c.inputs.push_back(a);
    Matrix z = (a * layer.weights.transpose()).rowwise() + layer.bias.transpose();
    a = activate(z, layer.activation);
    c.pre.push_back(std::move(z));
  }
  c.output = net.head == Head::Softmax ? softmax_rows(a) : a;
  return c;
}

struct LayerGrad {
  Matrix weights;
  Vector bias;
};

struct BackwardResult {
  std::vector<LayerGrad> grads;
  std::vector<Matrix> pre_grads;  // dL/dz per layer, one row per sample
};

// `d_top` is dL/d(last layer activation output). For a softmax head with
// cross-entropy pass (P - Y)/N directly: it is already dL/dz of the last layer
// because that layer is an identity layer under the head.
inline BackwardResult backward(const MlpParams& net, const ForwardCache& cache, const Matrix& d_top) {
  BackwardResult r;
  const std::size_t n_layers = net.layers.size();
  r.grads.resize(n_layers);
  r.pre_grads.resize(n_layers);
  Matrix delta = d_top;
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& layer = net.layers[li];
    Matrix dz = delta.cwiseProduct(activation_derivative(cache.pre[li], layer.activation));
    r.grads[li].weights = dz.transpose() * cache.inputs[li];
    r.grads[li].bias = dz.colwise().sum().transpose();
    if (li > 0) delta = dz * layer.weights;
    r.pre_grads[li] = std::move(dz);
  }
  return r;
}

// ---- flat parameter views -----------------------------------------------------

inline Vector pack(const MlpParams& net) {
  Vector v(net.parameter_count());
  Eigen::Index o = 0;
  for (const auto& l : net.layers) {
    v.segment(o, l.weights.size()) = Eigen::Map<const Vector>(l.weights.data(), l.weights.size());
    o += l.weights.size();
    v.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return v;
}

inline void unpack(MlpParams& net, const Vector& v) {
  if (v.size() != net.parameter_count()) throw DimensionError("mlp: flat parameter size mismatch");
  Eigen::Index o = 0;
  for (auto& l : net.layers) {
    Eigen::Map<Vector>(l.weights.data(), l.weights.size()) = v.segment(o, l.weights.size());
    o += l.weights.size();
    l.bias = v.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

inline Vector pack(const std::vector<LayerGrad>& grads) {
  Eigen::Index n = 0;
  for (const auto& g : grads) n += g.weights.size() + g.bias.size();
  Vector v(n);
  Eigen::Index o = 0;
  for (const auto& g : grads) {
    v.segment(o, g.weights.size()) = Eigen::Map<const Vector>(g.weights.data(), g.weights.size());
    o += g.weights.size();
    v.segment(o, g.bias.size()) = g.bias;
    o += g.bias.size();
  }
  return v;
}

// ---- construction ----------------------------------------------------------------

// Uniform init scaled for the layer's activation; deterministic under `rng`.
template <class Rng>
DenseLayer init_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng& rng) {
  DenseLayer l;
  l.activation = act;
  l.weights.resize(out, in);
  l.bias = Vector::Zero(out);
  const double limit = act == Activation::Relu ? std::sqrt(6.0 / static_cast<double>(in))
                                               : std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = u(rng);
  return l;
}

template <class Rng>
MlpParams init_mlp(Eigen::Index input_dim, const std::vector<int>& hidden, Eigen::Index output_dim, Activation hidden_act,
                   Head head, Rng& rng) {
  MlpParams net;
  net.head = head;
  Eigen::Index prev = input_dim;
  for (int h : hidden) {
    net.layers.push_back(init_layer(prev, h, hidden_act, rng));
    prev = h;
  }
  net.layers.push_back(init_layer(prev, output_dim, Activation::Identity, rng));
  return net;
}

// ---- classifier ------------------------------------------------------------------

struct ClassifierConfig {
  std::vector<int> hidden{32};
  Activation activation = Activation::Relu;
  TrainConfig train;
};

inline Matrix one_hot(const Labels& y, Eigen::Index k) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(y.size()), k);
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] >= k) throw Error("label " + std::to_string(y[i]) + " outside [0," + std::to_string(k) + ")");
    m(static_cast<Eigen::Index>(i), y[i]) = 1.0;
  }
  return m;
}

// Mean cross-entropy and its gradient at the given parameters.
inline double cross_entropy(const MlpParams& net, const Matrix& x, const Labels& y, Vector* grad = nullptr) {
  const ForwardCache c = forward(net, x);
  const Matrix t = one_hot(y, net.output_dim());
  const double n = static_cast<double>(x.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) loss -= std::log(std::max(c.output(i, y[static_cast<std::size_t>(i)]), 1e-300));
  loss /= n;
  if (grad) *grad = pack(backward(net, c, (c.output - t) / n).grads);
  return loss;
}

inline Matrix predict_proba(const MlpParams& net, const Matrix& x) {
  if (net.head != Head::Softmax) throw Error("predict_proba: model has no softmax head");
  return forward(net, x).output;
}

inline Labels argmax_rows(const Matrix& p) {
  Labels out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index j = 0;
    p.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

inline Labels predict(const MlpParams& net, const Matrix& x) { return argmax_rows(predict_proba(net, x)); }

inline double accuracy(const Labels& truth, const Labels& pred) {
  if (truth.size() != pred.size() || truth.empty()) throw DimensionError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// Minibatch Adam loop shared by every MLP objective. `objective` returns the
// minibatch loss and fills the flat gradient.
template <class Objective>
void adam_minibatch(Vector& params, Eigen::Index n_samples, const TrainConfig& cfg, Objective&& objective) {
  const int epochs = cfg.effective_epochs(n_samples);
  if (epochs == 0) return;
  Adam opt(params.size(), AdamConfig{cfg.lr});
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  std::vector<int> order(static_cast<std::size_t>(n_samples));
  std::iota(order.begin(), order.end(), 0);
  Vector grad;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n_samples; start += cfg.minibatch) {
      const Eigen::Index end = std::min<Eigen::Index>(n_samples, start + cfg.minibatch);
      std::vector<int> idx(order.begin() + start, order.begin() + end);
      const double loss = objective(params, idx, grad);
      if (!std::isfinite(loss) || !grad.allFinite()) throw TrainingError("non-finite loss during training", opt.updates() + 1);
      opt.step(params, grad);
    }
  }
}

inline void check_training_set(const Matrix& x, const Labels& y, int n_classes) {
  if (x.rows() == 0) throw Error("empty training set");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DimensionError("training set: feature rows and labels differ in length");
  if (!x.allFinite()) throw Error("training set contains non-finite features");
  std::set<int> present(y.begin(), y.end());
  for (int c : present)
    if (c < 0 || c >= n_classes) throw Error("label " + std::to_string(c) + " outside [0," + std::to_string(n_classes) + ")");
  if (present.size() < 2) throw Error("degenerate label set: training data contains a single class");
}

inline MlpParams init_classifier(Eigen::Index input_dim, int n_classes, const ClassifierConfig& cfg) {
  std::mt19937_64 rng(cfg.train.seed);
  return init_mlp(input_dim, cfg.hidden, n_classes, cfg.activation, Head::Softmax, rng);
}

// Cross-entropy training with Adam. Returns the theta* snapshot.
inline MlpParams train_classifier(const Matrix& x, const Labels& y, int n_classes, const ClassifierConfig& cfg,
                                  const MlpParams* warm_start = nullptr) {
  check_training_set(x, y, n_classes);
  MlpParams net = warm_start ? *warm_start : init_classifier(x.cols(), n_classes, cfg);
  if (!warm_start) net.input = Standardizer::fit(x);
  net.validate();
  if (net.input_dim() != x.cols()) throw DimensionError("train_classifier: warm start input dimension mismatch");
  Vector theta = pack(net);
  MlpParams work = net;
  adam_minibatch(theta, x.rows(), cfg.train, [&](const Vector& p, const std::vector<int>& idx, Vector& g) {
    unpack(work, p);
    Labels yb(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = y[static_cast<std::size_t>(idx[i])];
    return cross_entropy(work, take_rows(x, idx), yb, &g);
  });
  unpack(net, theta);
  net.theta_star = true;
  return net;
}

}  // namespace cdcsde::models
