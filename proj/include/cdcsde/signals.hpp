#pragma once

// The six per-step drift statistics:
//   q1  EWMA of the delayed KPI
//   q2  overlap of the top-1 / top-2 predicted-probability Gaussians
//   q3  mean per-feature Hellinger distance to the training histogram
//   q4  tanh of the test/train reconstruction-error ratio
//   q5  log of the negative SPN mean log-likelihood
//   q6  K-FAC natural-gradient squared norm per parameter

#include "cdcsde/models/autoencoder.hpp"
#include "cdcsde/models/kfac.hpp"
#include "cdcsde/models/spn.hpp"

#include <array>
#include <algorithm>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace cdcsde::signals {

inline constexpr int kSignals = 6;

// ---- q1 ------------------------------------------------------------------------

enum class KpiKind { ErrorRate, OneMinusF1 };

inline const char* to_string(KpiKind k) { return k == KpiKind::ErrorRate ? "error-rate" : "one-minus-f1"; }

inline KpiKind kpi_from_string(const std::string& s) {
  if (s == "error-rate" || s == "error_rate") return KpiKind::ErrorRate;
  if (s == "one-minus-f1" || s == "one_minus_f1") return KpiKind::OneMinusF1;
  throw Error("unknown kpi kind '" + s + "'");
}

// Error rate, or 1 - F1 (positive class 1 for binary problems, macro-F1 over
// the classes present in truth or prediction otherwise).
inline double kpi(const Labels& truth, const Labels& pred, KpiKind kind, int n_classes) {
  if (truth.size() != pred.size() || truth.empty()) throw DimensionError("kpi: truth and prediction differ in length");
  if (kind == KpiKind::ErrorRate) return 1.0 - models::accuracy(truth, pred);
  auto f1_for = [&](int cls) -> std::optional<double> {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += (pred[i] == cls && truth[i] == cls);
      fp += (pred[i] == cls && truth[i] != cls);
      fn += (pred[i] != cls && truth[i] == cls);
    }
    if (tp + fp + fn == 0) return std::nullopt;
    return 2 * tp / (2 * tp + fp + fn);
  };
  if (n_classes == 2) return 1.0 - f1_for(1).value_or(1.0);
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < n_classes; ++c)
    if (auto f = f1_for(c)) {
      sum += *f;
      ++count;
    }
  return count ? 1.0 - sum / count : 0.0;
}

// KPIs of delivered batches, newest k retained, ordered by for_step.
class KpiBuffer {
 public:
  KpiBuffer(int capacity = 10, double decay = 0.7) : capacity_(capacity), decay_(decay) {
    if (capacity < 1) throw Error("kpi buffer: capacity must be >= 1");
    if (!(decay > 0.0 && decay < 1.0)) throw Error("kpi buffer: decay must be in (0,1)");
  }

  void push(Step for_step, double value) {
    auto it = entries_.begin();
    while (it != entries_.end() && it->first <= for_step) ++it;
    entries_.insert(it, {for_step, value});
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  int capacity() const { return capacity_; }
  double decay() const { return decay_; }
  const std::deque<std::pair<Step, double>>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  int capacity_;
  double decay_;
  std::deque<std::pair<Step, double>> entries_;
};

// Newest entry weighted w, the one before w^2, ... the oldest retained w^k.
inline std::optional<double> q1_ewma_delayed_kpi(const KpiBuffer& buf) {
  if (buf.empty()) return std::nullopt;
  double sum = 0.0;
  double weight = buf.decay();
  const auto& e = buf.entries();
  for (auto it = e.rbegin(); it != e.rend(); ++it) {
    sum += it->second * weight;
    weight *= buf.decay();
  }
  return sum;
}

// ---- q2 ------------------------------------------------------------------------

struct Gaussian {
  double mean = 0.0;
  double stdev = 1.0;

  double pdf(double x) const {
    const double z = (x - mean) / stdev;
    return std::exp(-0.5 * z * z) / (stdev * std::sqrt(2.0 * std::numbers::pi));
  }
  double cdf(double x) const {
    if (x == std::numeric_limits<double>::infinity()) return 1.0;
    if (x == -std::numeric_limits<double>::infinity()) return 0.0;
    return 0.5 * std::erfc(-(x - mean) / (stdev * std::numbers::sqrt2));
  }
};

// Crossing points of two Gaussian densities: roots of the quadratic obtained
// by equating the log-densities.
inline std::vector<double> density_intersections(const Gaussian& a, const Gaussian& b) {
  const double va = a.stdev * a.stdev, vb = b.stdev * b.stdev;
  const double qa = 1.0 / (2 * vb) - 1.0 / (2 * va);
  const double qb = a.mean / va - b.mean / vb;
  const double qc = b.mean * b.mean / (2 * vb) - a.mean * a.mean / (2 * va) + std::log(b.stdev / a.stdev);
  std::vector<double> roots;
  const double scale = std::max({std::abs(qa), std::abs(qb), 1e-300});
  if (std::abs(qa) <= 1e-12 * scale) {
    if (std::abs(qb) > 0.0) roots.push_back(-qc / qb);
    return roots;
  }
  const double disc = qb * qb - 4 * qa * qc;
  if (disc < 0.0) return roots;
  // Numerically stable quadratic roots.
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (qb + std::copysign(sq, qb));
  if (q != 0.0) {
    roots.push_back(q / qa);
    roots.push_back(qc / q);
  } else {
    roots.push_back(0.0);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

// Integral of min(N_a, N_b) over the real line, from CDF differences between
// consecutive crossings.
inline double gaussian_overlap(const Gaussian& a, const Gaussian& b) {
  if (a.mean == b.mean && a.stdev == b.stdev) return 1.0;
  std::vector<double> cuts{-std::numeric_limits<double>::infinity()};
  for (double r : density_intersections(a, b)) cuts.push_back(r);
  cuts.push_back(std::numeric_limits<double>::infinity());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    double probe;
    if (std::isinf(lo) && std::isinf(hi))
      probe = 0.5 * (a.mean + b.mean);
    else if (std::isinf(lo))
      probe = hi - 1.0 - std::abs(hi);
    else if (std::isinf(hi))
      probe = lo + 1.0 + std::abs(lo);
    else
      probe = 0.5 * (lo + hi);
    // Compare in the log domain so far tails still order correctly.
    const double la = -0.5 * std::pow((probe - a.mean) / a.stdev, 2) - std::log(a.stdev);
    const double lb = -0.5 * std::pow((probe - b.mean) / b.stdev, 2) - std::log(b.stdev);
    const Gaussian& lower = la <= lb ? a : b;
    total += lower.cdf(hi) - lower.cdf(lo);
  }
  return std::clamp(total, 0.0, 1.0);
}

inline constexpr double kStdevFloor = 1e-4;

inline Gaussian fit_gaussian(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return Gaussian{mean, std::max(std::sqrt(var), kStdevFloor)};
}

inline double q2_model_uncertainty(const Matrix& proba) {
  if (proba.rows() < 2) throw Error("q2: need at least 2 samples");
  if (proba.cols() < 2) throw Error("q2: need at least 2 classes");
  std::vector<double> top1, top2;
  top1.reserve(static_cast<std::size_t>(proba.rows()));
  top2.reserve(static_cast<std::size_t>(proba.rows()));
  for (Eigen::Index i = 0; i < proba.rows(); ++i) {
    double first = -1.0, second = -1.0;
    for (Eigen::Index j = 0; j < proba.cols(); ++j) {
      const double p = proba(i, j);
      if (p > first) {
        second = first;
        first = p;
      } else if (p > second) {
        second = p;
      }
    }
    top1.push_back(first);
    top2.push_back(second);
  }
  return gaussian_overlap(fit_gaussian(top1), fit_gaussian(top2));
}

// ---- q3 ------------------------------------------------------------------------

struct HellingerBins {
  std::vector<std::vector<double>> edges;        // per feature, interior edges (ascending)
  std::vector<std::vector<double>> train_props;  // per feature, one entry per bin

  std::size_t features() const { return edges.size(); }

  std::size_t bin_of(std::size_t f, double x) const {
    const auto& e = edges[f];
    return static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), x) - e.begin());
  }

  std::vector<double> proportions(std::size_t f, const Eigen::Ref<const Vector>& column) const {
    std::vector<double> p(edges[f].size() + 1, 0.0);
    for (Eigen::Index i = 0; i < column.size(); ++i) p[bin_of(f, column(i))] += 1.0;
    for (double& v : p) v /= static_cast<double>(column.size());
    return p;
  }
};

// B equal-frequency bins per feature from the training data.
inline HellingerBins fit_hellinger_bins(const Matrix& train, int n_bins = 10) {
  if (train.rows() == 0) throw Error("hellinger bins: empty training data");
  if (n_bins < 1) throw Error("hellinger bins: need at least one bin");
  HellingerBins h;
  for (Eigen::Index f = 0; f < train.cols(); ++f) {
    Vector col = train.col(f);
    std::sort(col.data(), col.data() + col.size());
    std::vector<double> e;
    for (int j = 1; j < n_bins; ++j) {
      const auto idx = std::min<Eigen::Index>(col.size() - 1, static_cast<Eigen::Index>(static_cast<double>(j) / n_bins * static_cast<double>(col.size())));
      e.push_back(col(idx));
    }
    h.edges.push_back(std::move(e));
    h.train_props.push_back(h.proportions(static_cast<std::size_t>(f), train.col(f)));
  }
  return h;
}

inline double hellinger_term(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionError("hellinger: bin count mismatch");
  double s = 0.0;
  for (std::size_t z = 0; z < p.size(); ++z) {
    const double d = std::sqrt(p[z]) - std::sqrt(q[z]);
    s += d * d;
  }
  return std::sqrt(s);
}

inline double q3_hellinger(const HellingerBins& bins, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != bins.features())
    throw DimensionError("q3: batch has " + std::to_string(batch.cols()) + " features, bins cover " + std::to_string(bins.features()));
  if (batch.rows() == 0) throw Error("q3: empty batch");
  double total = 0.0;
  for (std::size_t f = 0; f < bins.features(); ++f)
    total += hellinger_term(bins.train_props[f], bins.proportions(f, batch.col(static_cast<Eigen::Index>(f))));
  return total / static_cast<double>(bins.features());
}

// ---- q4, q5 --------------------------------------------------------------------

// A score plus whether a degenerate-input substitution was needed.
struct FlaggedScore {
  double value = 0.0;
  bool flagged = false;
};

inline constexpr double kTinyPositive = 1e-12;

inline FlaggedScore q4_from_losses(double test_loss, double train_loss) {
  FlaggedScore s;
  double denom = train_loss;
  if (!(denom > 0.0)) {
    denom = kTinyPositive;
    s.flagged = true;
  }
  s.value = std::tanh(test_loss / denom);
  return s;
}

inline FlaggedScore q4_ae_score(const models::AutoencoderModel& ae, const Matrix& batch) {
  return q4_from_losses(models::reconstruction_mse(ae, batch), ae.training_loss);
}

inline FlaggedScore q5_from_loglik(double ll) {
  FlaggedScore s;
  double neg = -ll;
  if (!(neg > kTinyPositive)) {
    neg = kTinyPositive;
    s.flagged = true;
  }
  s.value = std::log(neg);
  return s;
}

inline FlaggedScore q5_spn_score(const models::SpnModel& spn, const Matrix& batch) {
  return q5_from_loglik(models::spn_loglik(spn, batch));
}

// ---- q6 ------------------------------------------------------------------------

struct LabeledBatch {
  const Matrix* features = nullptr;
  const Labels* labels = nullptr;
};

// Mean over this step's deliveries; absent when nothing was delivered.
inline std::optional<double> q6_gradient_score(const models::MlpParams& clf, const models::KfacState& kfac,
                                               const std::vector<LabeledBatch>& delivered) {
  if (delivered.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& d : delivered) sum += models::natural_gradient_sq_norm(clf, kfac, *d.features, *d.labels);
  return sum / static_cast<double>(delivered.size());
}

// ---- assembly ------------------------------------------------------------------

struct ScoreVector {
  Step step = 0;
  std::array<std::optional<double>, kSignals> q{};
  bool q4_flagged = false;
  bool q5_flagged = false;

  bool present(int i) const { return q[static_cast<std::size_t>(i)].has_value(); }
};

// Models the signals read. `embed` routes q3/q5 through the autoencoder's
// encoder (unstructured inputs).
struct ModelSet {
  models::MlpParams classifier;
  models::KfacState kfac;
  models::AutoencoderModel autoencoder;
  models::SpnModel spn;
  HellingerBins bins;
  bool embed = false;

  Matrix density_features(const Matrix& x) const { return embed ? models::encode(autoencoder, x) : x; }
};

struct ScoreContext {
  Step step = 0;
  const Matrix* features = nullptr;
  const Matrix* proba = nullptr;  // classifier output for `features`; computed when null
  const KpiBuffer* kpi = nullptr;
  std::vector<LabeledBatch> delivered;
  std::array<bool, kSignals> enabled{true, true, true, true, true, true};
};

inline ScoreVector compute_scores(const ModelSet& m, const ScoreContext& ctx) {
  if (!ctx.features) throw Error("compute_scores: no batch");
  ScoreVector s;
  s.step = ctx.step;
  const Matrix& x = *ctx.features;
  const auto on = [&](int i) { return ctx.enabled[static_cast<std::size_t>(i)]; };
  if (on(0) && ctx.kpi) s.q[0] = q1_ewma_delayed_kpi(*ctx.kpi);
  if (on(1)) {
    if (ctx.proba)
      s.q[1] = q2_model_uncertainty(*ctx.proba);
    else
      s.q[1] = q2_model_uncertainty(models::predict_proba(m.classifier, x));
  }
  if (on(2) || on(4)) {
    const Matrix dx = m.density_features(x);
    if (on(2)) s.q[2] = q3_hellinger(m.bins, dx);
    if (on(4)) {
      const auto r = q5_spn_score(m.spn, dx);
      s.q[4] = r.value;
      s.q5_flagged = r.flagged;
    }
  }
  if (on(3)) {
    const auto r = q4_ae_score(m.autoencoder, x);
    s.q[3] = r.value;
    s.q4_flagged = r.flagged;
  }
  if (on(5)) s.q[5] = q6_gradient_score(m.classifier, m.kfac, ctx.delivered);
  return s;
}

}  // namespace cdcsde::signals
