#pragma once

// Sum-product network density estimator with fixed structure
// normal -> product -> sum -> product: univariate Gaussian leaves, product
// nodes over a feature group, a weighted sum over C such products per group,
// and a root product over groups.

#include "cdcsde/models/mlp.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

namespace cdcsde::models {

struct SpnConfig {
  int groups = 2;
  int components = 5;
  double sigma_floor = 1e-3;
  // Fit leaves on per-feature standardized inputs (densities are then those
  // of the standardized features).
  bool standardize = true;
  TrainConfig train;
};

struct SpnGroup {
  std::vector<int> features;
  Matrix means;          // C x |features|
  Matrix log_scales;     // C x |features|; sigma = exp(.) + floor
  Vector weight_logits;  // C; weights = softmax(logits)
};

struct SpnModel {
  Standardizer input;
  std::vector<SpnGroup> groups;
  double sigma_floor = 1e-3;
  Eigen::Index dim = 0;

  static constexpr const char* structure = "normal->product->sum->product";

  int components() const { return groups.empty() ? 0 : static_cast<int>(groups.front().weight_logits.size()); }

  long parameter_count() const {
    long n = 0;
    for (const auto& g : groups) n += static_cast<long>(g.means.size() + g.log_scales.size() + g.weight_logits.size());
    return n;
  }
};

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline Vector log_softmax(const Vector& logits) {
  return (logits.array() - log_sum_exp(logits)).matrix();
}

inline Vector mixture_weights(const SpnGroup& g) { return log_softmax(g.weight_logits).array().exp().matrix(); }

inline double sigma_of(double log_scale, double floor) { return std::exp(log_scale) + floor; }

// Contiguous blocks of ceil(d / G) features.
inline std::vector<std::vector<int>> contiguous_groups(Eigen::Index d, int n_groups) {
  const int g = std::max(1, std::min<int>(n_groups, static_cast<int>(d)));
  const int width = static_cast<int>((d + g - 1) / g);
  std::vector<std::vector<int>> out;
  for (int start = 0; start < d; start += width) {
    std::vector<int> f;
    for (int j = start; j < std::min<int>(static_cast<int>(d), start + width); ++j) f.push_back(j);
    out.push_back(std::move(f));
  }
  return out;
}

namespace detail {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Per-sample, per-component log of the product node for one group (N x C).
inline Matrix component_log_density(const SpnGroup& g, const Matrix& x, double floor) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c_count = g.means.rows();
  Matrix out = Matrix::Zero(n, c_count);
  for (Eigen::Index c = 0; c < c_count; ++c) {
    for (std::size_t k = 0; k < g.features.size(); ++k) {
      const auto f = static_cast<Eigen::Index>(k);
      const double sigma = sigma_of(g.log_scales(c, f), floor);
      const double mu = g.means(c, f);
      const auto z = (x.col(g.features[k]).array() - mu) / sigma;
      out.col(c).array() += -0.5 * z.square() - std::log(sigma) - kHalfLog2Pi;
    }
  }
  return out;
}

}  // namespace detail

// Log-density of every row (log domain throughout).
inline Vector spn_row_loglik(const SpnModel& m, const Matrix& x) {
  if (x.cols() != m.dim)
    throw DimensionError("spn: input has " + std::to_string(x.cols()) + " features, model expects " + std::to_string(m.dim));
  const Matrix xs = m.input.apply(x);
  Vector ll = Vector::Zero(x.rows());
  for (const auto& g : m.groups) {
    const Matrix lc = detail::component_log_density(g, xs, m.sigma_floor).rowwise() + log_softmax(g.weight_logits).transpose();
    for (Eigen::Index i = 0; i < x.rows(); ++i) ll(i) += log_sum_exp(lc.row(i).transpose());
  }
  return ll;
}

// Mean log-likelihood ll_n over the rows of `x`.
inline double spn_loglik(const SpnModel& m, const Matrix& x) {
  if (x.rows() == 0) throw Error("spn_loglik: empty input");
  return spn_row_loglik(m, x).mean();
}

// Posterior component responsibilities for one group (N x C).
inline Matrix spn_responsibilities(const SpnModel& m, std::size_t group, const Matrix& x) {
  const auto& g = m.groups.at(group);
  Matrix lc = detail::component_log_density(g, m.input.apply(x), m.sigma_floor).rowwise() + log_softmax(g.weight_logits).transpose();
  for (Eigen::Index i = 0; i < lc.rows(); ++i) {
    const double z = log_sum_exp(lc.row(i).transpose());
    lc.row(i) = (lc.row(i).array() - z).exp();
  }
  return lc;
}

// ---- flat parameters: per group means, log_scales, logits -----------------------

inline Vector pack(const SpnModel& m) {
  Vector v(m.parameter_count());
  Eigen::Index o = 0;
  for (const auto& g : m.groups) {
    v.segment(o, g.means.size()) = Eigen::Map<const Vector>(g.means.data(), g.means.size());
    o += g.means.size();
    v.segment(o, g.log_scales.size()) = Eigen::Map<const Vector>(g.log_scales.data(), g.log_scales.size());
    o += g.log_scales.size();
    v.segment(o, g.weight_logits.size()) = g.weight_logits;
    o += g.weight_logits.size();
  }
  return v;
}

inline void unpack(SpnModel& m, const Vector& v) {
  if (v.size() != m.parameter_count()) throw DimensionError("spn: flat parameter size mismatch");
  Eigen::Index o = 0;
  for (auto& g : m.groups) {
    Eigen::Map<Vector>(g.means.data(), g.means.size()) = v.segment(o, g.means.size());
    o += g.means.size();
    Eigen::Map<Vector>(g.log_scales.data(), g.log_scales.size()) = v.segment(o, g.log_scales.size());
    o += g.log_scales.size();
    g.weight_logits = v.segment(o, g.weight_logits.size());
    o += g.weight_logits.size();
  }
}

// Negative mean log-likelihood and its gradient in the flat layout. `x` is in
// the model's leaf coordinates (already standardized).
inline double spn_negative_loglik(const SpnModel& m, const Matrix& x, Vector* grad = nullptr) {
  const double n = static_cast<double>(x.rows());
  double total = 0.0;
  if (grad) grad->resize(m.parameter_count());
  Eigen::Index o = 0;
  for (const auto& g : m.groups) {
    const Eigen::Index c_count = g.means.rows();
    const Eigen::Index fc = static_cast<Eigen::Index>(g.features.size());
    const Vector lw = log_softmax(g.weight_logits);
    Matrix lc = detail::component_log_density(g, x, m.sigma_floor).rowwise() + lw.transpose();
    Matrix resp(lc.rows(), c_count);
    for (Eigen::Index i = 0; i < lc.rows(); ++i) {
      const double z = log_sum_exp(lc.row(i).transpose());
      total += z;
      resp.row(i) = (lc.row(i).array() - z).exp();
    }
    if (!grad) continue;
    Matrix d_mean(c_count, fc), d_log_scale(c_count, fc);
    for (Eigen::Index c = 0; c < c_count; ++c) {
      for (Eigen::Index k = 0; k < fc; ++k) {
        const double e = std::exp(g.log_scales(c, k));
        const double sigma = e + m.sigma_floor;
        const auto diff = x.col(g.features[static_cast<std::size_t>(k)]).array() - g.means(c, k);
        const auto r = resp.col(c).array();
        d_mean(c, k) = -(r * diff).sum() / (sigma * sigma) / n;
        const double d_sigma = (r * (-1.0 / sigma + diff.square() / (sigma * sigma * sigma))).sum();
        d_log_scale(c, k) = -d_sigma * e / n;
      }
    }
    const Vector d_logits = -(resp.colwise().sum().transpose() - n * lw.array().exp().matrix()) / n;
    grad->segment(o, d_mean.size()) = Eigen::Map<const Vector>(d_mean.data(), d_mean.size());
    o += d_mean.size();
    grad->segment(o, d_log_scale.size()) = Eigen::Map<const Vector>(d_log_scale.data(), d_log_scale.size());
    o += d_log_scale.size();
    grad->segment(o, d_logits.size()) = d_logits;
    o += d_logits.size();
  }
  return -total / n;
}

// Deterministic start: component c sits at the (c + 1/2)/C quantile of each
// feature, every leaf starts at the feature's standard deviation, weights uniform.
inline SpnModel init_spn(const Matrix& x, const SpnConfig& cfg) {
  if (cfg.components < 1) throw Error("spn: components must be >= 1");
  SpnModel m;
  m.dim = x.cols();
  m.sigma_floor = cfg.sigma_floor;
  const int c_count = cfg.components;
  for (auto& feats : contiguous_groups(x.cols(), cfg.groups)) {
    SpnGroup g;
    g.features = std::move(feats);
    const auto fc = static_cast<Eigen::Index>(g.features.size());
    g.means.resize(c_count, fc);
    g.log_scales.resize(c_count, fc);
    g.weight_logits = Vector::Zero(c_count);
    for (Eigen::Index k = 0; k < fc; ++k) {
      Vector col = x.col(g.features[static_cast<std::size_t>(k)]);
      std::sort(col.data(), col.data() + col.size());
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().mean());
      const double target = std::max(sd - cfg.sigma_floor, 1e-6);
      for (int c = 0; c < c_count; ++c) {
        const double q = (c + 0.5) / c_count;
        const auto idx = std::min<Eigen::Index>(col.size() - 1, static_cast<Eigen::Index>(q * static_cast<double>(col.size())));
        g.means(c, k) = col(idx);
        g.log_scales(c, k) = std::log(target);
      }
    }
    m.groups.push_back(std::move(g));
  }
  return m;
}

// Gradient ascent on the mean log-likelihood with Adam.
inline SpnModel train_spn(const Matrix& x, const SpnConfig& cfg) {
  if (x.rows() == 0) throw Error("train_spn: empty input");
  if (x.rows() < cfg.components)
    throw Error("train_spn: " + std::to_string(x.rows()) + " samples for " + std::to_string(cfg.components) + " components");
  if (!x.allFinite()) throw Error("train_spn: non-finite features");
  Standardizer input = cfg.standardize ? Standardizer::fit(x) : Standardizer{};
  const Matrix xs = input.apply(x);
  SpnModel m = init_spn(xs, cfg);
  m.input = input;
  Vector theta = pack(m);
  SpnModel work = m;
  const TrainConfig& tc = cfg.train;
  const int epochs = tc.effective_epochs(x.rows());
  if (epochs > 0) {
    Adam opt(theta.size(), AdamConfig{tc.lr});
    std::mt19937_64 rng(tc.seed ^ 0x5917ULL);
    std::vector<int> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), 0);
    Vector grad;
    for (int e = 0; e < epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < x.rows(); start += tc.minibatch) {
        const Eigen::Index end = std::min<Eigen::Index>(x.rows(), start + tc.minibatch);
        std::vector<int> idx(order.begin() + start, order.begin() + end);
        unpack(work, theta);
        const double loss = spn_negative_loglik(work, take_rows(xs, idx), &grad);
        if (!std::isfinite(loss) || !grad.allFinite())
          throw TrainingError("spn: non-finite likelihood during training", opt.updates() + 1);
        opt.step(theta, grad);
      }
    }
  }
  unpack(m, theta);
  return m;
}

}  // namespace cdcsde::models
