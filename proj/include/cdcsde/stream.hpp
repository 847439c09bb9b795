#pragma once

// Batched feature streams, synthetic generators, CSV pools, and the
// lag-of-labels delivery scheduler.

#include "cdcsde/core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cdcsde {

// One stream step: a matrix of feature rows. Labels are not carried here;
// they only reach consumers through LabelDelivery.
struct Batch {
  Step step = 0;
  Matrix features;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

// Labels for the features of `for_step`, arriving at `delivered_at`.
struct LabelDelivery {
  Step delivered_at = 0;
  Step for_step = 0;
  Labels labels;
};

struct LagPolicy {
  enum class Kind { Exponential, Fixed };

  Kind kind = Kind::Exponential;
  double scale = 4.0;  // exponential only
  int fixed = 1;       // fixed only
  std::uint64_t seed = 0;

  static LagPolicy exponential(double scale, std::uint64_t seed = 0) {
    LagPolicy p;
    p.kind = Kind::Exponential;
    p.scale = scale;
    p.seed = seed;
    return p;
  }
  static LagPolicy fixed_lag(int l, std::uint64_t seed = 0) {
    LagPolicy p;
    p.kind = Kind::Fixed;
    p.fixed = l;
    p.seed = seed;
    return p;
  }

  void validate() const {
    if (kind == Kind::Exponential && !(scale > 0.0)) throw Error("lag policy: exponential scale must be positive");
    if (kind == Kind::Fixed && fixed < 1) throw Error("lag policy: fixed lag must be >= 1");
  }

  // Floored exponential draw clamped to >= 1, or the fixed lag.
  template <class Rng>
  int sample(Rng& rng) const {
    if (kind == Kind::Fixed) return fixed;
    std::exponential_distribution<double> dist(1.0 / scale);
    const double draw = std::floor(dist(rng));
    return std::max(1, static_cast<int>(std::min(draw, 1e9)));
  }

  std::string describe() const {
    std::ostringstream os;
    if (kind == Kind::Fixed)
      os << "fixed(" << fixed << ")";
    else
      os << "exp(" << scale << ")";
    return os.str();
  }
};

// E[max(1, floor(X))] for X ~ Exp(scale): the geometric tail sum
// sum_{k>=1} P(floor X >= k) plus the mass clamped up from 0.
inline double expected_clamped_floor_lag(double scale, int terms = 100000) {
  double tail = 0.0;
  for (int k = 1; k <= terms; ++k) {
    const double p = std::exp(-k / scale);
    tail += p;
    if (p < 1e-18) break;
  }
  return tail + (1.0 - std::exp(-1.0 / scale));
}

// Labeled feature vectors a stream can draw rows from.
struct SamplePool {
  Matrix features;
  Labels labels;
  std::vector<std::string> class_names;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  int n_classes() const {
    if (!class_names.empty()) return static_cast<int>(class_names.size());
    int k = 0;
    for (int y : labels) k = std::max(k, y + 1);
    return k;
  }
};

enum class GeneratorKind { Sea, Sine2, StationaryGaussian, Composite, Csv };

inline const char* to_string(GeneratorKind g) {
  switch (g) {
    case GeneratorKind::Sea: return "sea";
    case GeneratorKind::Sine2: return "sine2";
    case GeneratorKind::StationaryGaussian: return "stationary-gaussian";
    case GeneratorKind::Composite: return "composite";
    case GeneratorKind::Csv: return "csv";
  }
  return "?";
}

inline GeneratorKind generator_from_string(const std::string& s) {
  if (s == "sea") return GeneratorKind::Sea;
  if (s == "sine2") return GeneratorKind::Sine2;
  if (s == "stationary-gaussian" || s == "gaussian") return GeneratorKind::StationaryGaussian;
  if (s == "composite") return GeneratorKind::Composite;
  if (s == "csv") return GeneratorKind::Csv;
  throw Error("unknown stream generator '" + s + "'");
}

enum class Scenario { Sudden, SuddenGradual, GradIncrease, GradPlateau, GradDecrease };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::Sudden: return "sudden";
    case Scenario::SuddenGradual: return "sudden_gradual";
    case Scenario::GradIncrease: return "grad_increase";
    case Scenario::GradPlateau: return "grad_plateau";
    case Scenario::GradDecrease: return "grad_decrease";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "sudden") return Scenario::Sudden;
  if (s == "sudden_gradual") return Scenario::SuddenGradual;
  if (s == "grad_increase") return Scenario::GradIncrease;
  if (s == "grad_plateau") return Scenario::GradPlateau;
  if (s == "grad_decrease") return Scenario::GradDecrease;
  throw Error("unknown composite scenario '" + s + "'");
}

// Where a composite stream draws its base or drift rows from.
struct PoolSource {
  enum class Kind { Clusters, Csv };
  Kind kind = Kind::Clusters;
  std::string path;  // csv only
};

// Synthetic stand-in for a pair of image-feature datasets sharing a label
// set: class-conditional Gaussian clusters, with the drift pool displaced
// from the base pool by a per-class domain shift.
struct ClusterPoolConfig {
  int dim = 20;
  int classes = 10;
  int base_size = 10000;
  int drift_size = 9298;
  double class_separation = 6.0;  // expected distance between class means
  double spread = 1.0;            // within-class stdev
  double domain_gap = 4.0;        // norm of the per-class shift of the drift pool
};

struct CompositeConfig {
  Scenario scenario = Scenario::Sudden;
  double peak_fraction = 0.5;
  int period = 100;         // batches between sudden introductions
  int ramp_batches = 500;   // plateau / turning point for gradual scenarios
  PoolSource base;
  PoolSource drift;
  ClusterPoolConfig clusters;
};

struct StreamSpec {
  GeneratorKind generator = GeneratorKind::Sea;
  long total_samples = 50000;
  int batch_size = 64;
  std::uint64_t seed = 0;

  // sea / sine2
  long concept_length = 12500;
  double label_noise = 0.0;

  // stationary-gaussian
  int gaussian_dim = 4;
  int gaussian_classes = 2;
  double gaussian_separation = 3.0;

  CompositeConfig composite;
  std::string csv_path;

  long n_batches() const { return total_samples / batch_size; }

  void validate() const {
    if (total_samples < 0 || (total_samples == 0 && generator != GeneratorKind::Csv))
      throw Error("stream: total_samples must be positive");
    if (batch_size <= 0) throw Error("stream: batch_size must be positive");
    if ((generator == GeneratorKind::Sea || generator == GeneratorKind::Sine2) && concept_length <= 0)
      throw Error("stream: concept_length must be positive");
    if (generator == GeneratorKind::Csv && csv_path.empty()) throw Error("stream: csv_path is required for csv streams");
    if (generator == GeneratorKind::Composite) {
      const auto& c = composite;
      if (c.peak_fraction < 0.0 || c.peak_fraction > 1.0) throw Error("stream: composite.peak_fraction must be in [0,1]");
      if (c.period <= 0 || c.ramp_batches <= 0) throw Error("stream: composite.period and ramp_batches must be positive");
      if (c.base.kind == PoolSource::Kind::Csv && c.base.path.empty())
        throw Error("stream: composite.base.path is required for csv pools");
      if (c.drift.kind == PoolSource::Kind::Csv && c.drift.path.empty())
        throw Error("stream: composite.drift.path is required for csv pools");
    }
  }

  static StreamSpec sea_default() { return StreamSpec{}; }
  static StreamSpec sine2_default() {
    StreamSpec s;
    s.generator = GeneratorKind::Sine2;
    s.total_samples = 100000;
    s.concept_length = 10000;
    return s;
  }
  // Per-generator sizes: 500 batches for the stationary check, 1000 batches
  // for composite streams (injections at 100..900), whole file for csv.
  static StreamSpec defaults_for(GeneratorKind g) {
    StreamSpec s = g == GeneratorKind::Sine2 ? sine2_default() : sea_default();
    s.generator = g;
    if (g == GeneratorKind::StationaryGaussian) s.total_samples = 32000;
    if (g == GeneratorKind::Composite) s.total_samples = 64000;
    if (g == GeneratorKind::Csv) s.total_samples = 0;
    return s;
  }
};

// A fully materialized stream. Labels live beside the batches and are only
// handed out by LabelScheduler.
struct LabeledStream {
  std::vector<Batch> batches;
  std::vector<Labels> labels;
  std::vector<Step> drift_truth;
  int n_classes = 2;
  int dim = 0;
  bool unstructured = false;

  std::size_t size() const { return batches.size(); }
};

// ---- concept functions -----------------------------------------------------

inline constexpr double kSeaThresholds[4] = {8.0, 9.0, 7.0, 9.5};

inline int sea_label(double f1, double f2, double threshold) { return (f1 + f2 <= threshold) ? 1 : 0; }

inline int sine2_label(double x1, double x2, int concept_idx) {
  const int base = (x2 < 0.5 + 0.3 * std::sin(3.0 * std::numbers::pi * x1)) ? 1 : 0;
  return (concept_idx % 2 == 0) ? base : 1 - base;
}

namespace detail {

inline std::vector<Step> drift_batches(long total, long concept_length, int batch_size) {
  std::vector<Step> out;
  const long n_batches = total / batch_size;
  for (long pos = concept_length; pos < total; pos += concept_length) {
    const Step b = pos / batch_size;
    if (b < n_batches) out.push_back(b);
  }
  return out;
}

template <class RowFn>
LabeledStream concept_stream(const StreamSpec& spec, int dim, RowFn&& row_fn) {
  LabeledStream s;
  s.dim = dim;
  s.n_classes = 2;
  s.drift_truth = drift_batches(spec.total_samples, spec.concept_length, spec.batch_size);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> flip(0.0, 1.0);
  const long nb = spec.n_batches();
  s.batches.reserve(static_cast<std::size_t>(nb));
  s.labels.reserve(static_cast<std::size_t>(nb));
  for (long b = 0; b < nb; ++b) {
    Batch batch{b, Matrix(spec.batch_size, dim)};
    Labels y(static_cast<std::size_t>(spec.batch_size));
    for (int r = 0; r < spec.batch_size; ++r) {
      const long idx = b * spec.batch_size + r;
      const int concept_idx = static_cast<int>(idx / spec.concept_length);
      int label = row_fn(rng, batch.features.row(r), concept_idx);
      if (spec.label_noise > 0.0 && flip(rng) < spec.label_noise) label = 1 - label;
      y[static_cast<std::size_t>(r)] = label;
    }
    s.batches.push_back(std::move(batch));
    s.labels.push_back(std::move(y));
  }
  return s;
}

}  // namespace detail

inline LabeledStream gen_sea(const StreamSpec& spec) {
  spec.validate();
  std::uniform_real_distribution<double> u(0.0, 10.0);
  return detail::concept_stream(spec, 3, [&](std::mt19937_64& rng, auto row, int concept_idx) {
    for (int j = 0; j < 3; ++j) row(j) = u(rng);
    return sea_label(row(0), row(1), kSeaThresholds[concept_idx % 4]);
  });
}

inline LabeledStream gen_sine2(const StreamSpec& spec) {
  spec.validate();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return detail::concept_stream(spec, 2, [&](std::mt19937_64& rng, auto row, int concept_idx) {
    row(0) = u(rng);
    row(1) = u(rng);
    return sine2_label(row(0), row(1), concept_idx);
  });
}

// No-drift Gaussian mixture: one isotropic component per class.
inline LabeledStream gen_stationary_gaussian(const StreamSpec& spec) {
  spec.validate();
  const int d = spec.gaussian_dim;
  const int k = spec.gaussian_classes;
  if (d <= 0 || k < 2) throw Error("stream: stationary-gaussian needs dim >= 1 and >= 2 classes");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix means(k, d);
  for (int c = 0; c < k; ++c)
    for (int j = 0; j < d; ++j) means(c, j) = n01(rng) * spec.gaussian_separation / std::sqrt(2.0);
  std::uniform_int_distribution<int> pick(0, k - 1);

  LabeledStream s;
  s.dim = d;
  s.n_classes = k;
  const long nb = spec.n_batches();
  for (long b = 0; b < nb; ++b) {
    Batch batch{b, Matrix(spec.batch_size, d)};
    Labels y(static_cast<std::size_t>(spec.batch_size));
    for (int r = 0; r < spec.batch_size; ++r) {
      const int c = pick(rng);
      for (int j = 0; j < d; ++j) batch.features(r, j) = means(c, j) + n01(rng);
      y[static_cast<std::size_t>(r)] = c;
    }
    s.batches.push_back(std::move(batch));
    s.labels.push_back(std::move(y));
  }
  return s;
}

// ---- CSV pools ---------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace detail

// Min-max scale each column to [0,1] in place; constant columns become 0.
inline void minmax_scale(Matrix& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double lo = x.col(j).minCoeff();
    const double hi = x.col(j).maxCoeff();
    const double range = hi - lo;
    if (range > 0.0)
      x.col(j) = (x.col(j).array() - lo) / range;
    else
      x.col(j).setZero();
  }
}

// Header row required; last column is the class label, the rest numeric.
// Rows and columns in error messages are 1-based and count the header as row 1.
inline SamplePool load_csv(const std::string& path, bool scale = true) {
  std::ifstream in(path);
  if (!in) throw Error("csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw Error("csv: '" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw Error("csv: '" + path + "' needs at least one feature column and a label column");
  const std::size_t n_cols = header.size();

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  long row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() < n_cols)
      throw Error("csv: row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) + " columns, expected " +
                  std::to_string(n_cols) + " (missing label column)");
    std::vector<double> values(n_cols - 1);
    for (std::size_t c = 0; c + 1 < n_cols; ++c) {
      const std::string cell = detail::trim(cells[c]);
      const std::string where = "row " + std::to_string(row_no) + ", column " + std::to_string(c + 1) + " ('" + header[c] + "')";
      if (cell.empty()) throw Error("csv: missing value at " + where);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw Error("csv: non-numeric value '" + cell + "' at " + where);
      }
      if (used != cell.size() || !std::isfinite(v)) throw Error("csv: non-numeric value '" + cell + "' at " + where);
      values[c] = v;
    }
    const std::string label = detail::trim(cells[n_cols - 1]);
    if (label.empty())
      throw Error("csv: missing label at row " + std::to_string(row_no) + ", column " + std::to_string(n_cols));
    rows.push_back(std::move(values));
    raw_labels.push_back(label);
  }
  if (rows.empty()) throw Error("csv: '" + path + "' has no data rows");

  SamplePool pool;
  pool.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_cols - 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < n_cols - 1; ++j) pool.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];

  // Integer labels 0..K-1 keep their values; anything else is indexed in
  // order of first appearance.
  bool dense_ints = true;
  std::vector<int> ints;
  ints.reserve(raw_labels.size());
  for (const auto& l : raw_labels) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(l, &used);
    } catch (const std::exception&) {
      dense_ints = false;
      break;
    }
    if (used != l.size() || v < 0) {
      dense_ints = false;
      break;
    }
    ints.push_back(v);
  }
  if (dense_ints) {
    const int k = *std::max_element(ints.begin(), ints.end()) + 1;
    pool.labels = ints;
    for (int c = 0; c < k; ++c) pool.class_names.push_back(std::to_string(c));
  } else {
    std::unordered_map<std::string, int> index;
    for (const auto& l : raw_labels) {
      auto [it, inserted] = index.try_emplace(l, static_cast<int>(pool.class_names.size()));
      if (inserted) pool.class_names.push_back(l);
      pool.labels.push_back(it->second);
    }
  }
  if (scale) minmax_scale(pool.features);
  return pool;
}

// Rows in file order, cut into full batches.
inline LabeledStream stream_from_pool(const SamplePool& pool, int batch_size, long total_samples = 0) {
  const long n = total_samples > 0 ? std::min<long>(total_samples, pool.size()) : static_cast<long>(pool.size());
  LabeledStream s;
  s.dim = static_cast<int>(pool.dim());
  s.n_classes = pool.n_classes();
  const long nb = n / batch_size;
  for (long b = 0; b < nb; ++b) {
    s.batches.push_back(Batch{b, pool.features.middleRows(b * batch_size, batch_size)});
    s.labels.emplace_back(pool.labels.begin() + b * batch_size, pool.labels.begin() + (b + 1) * batch_size);
  }
  return s;
}

// ---- composite base+drift scenarios -------------------------------------------

// Base and drift pools of class-conditional Gaussian clusters.
inline std::pair<SamplePool, SamplePool> make_cluster_pools(const ClusterPoolConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix means(cfg.classes, cfg.dim);
  Matrix shift(cfg.classes, cfg.dim);
  for (int c = 0; c < cfg.classes; ++c) {
    for (int j = 0; j < cfg.dim; ++j) {
      means(c, j) = n01(rng) * cfg.class_separation / std::sqrt(2.0 * cfg.dim);
      shift(c, j) = n01(rng);
    }
    shift.row(c) *= cfg.domain_gap / shift.row(c).norm();
  }
  auto draw = [&](int n, bool drifted) {
    SamplePool p;
    p.features.resize(n, cfg.dim);
    p.labels.resize(static_cast<std::size_t>(n));
    for (int c = 0; c < cfg.classes; ++c) p.class_names.push_back(std::to_string(c));
    for (int i = 0; i < n; ++i) {
      const int c = i % cfg.classes;
      for (int j = 0; j < cfg.dim; ++j)
        p.features(i, j) = means(c, j) + (drifted ? shift(c, j) : 0.0) + cfg.spread * n01(rng);
      p.labels[static_cast<std::size_t>(i)] = c;
    }
    return p;
  };
  SamplePool base = draw(cfg.base_size, false);
  SamplePool drift = draw(cfg.drift_size, true);
  return {std::move(base), std::move(drift)};
}

// Fraction of a batch's rows drawn from the drift pool.
inline double mixing_fraction(const CompositeConfig& c, long batch, long n_batches) {
  const double peak = c.peak_fraction;
  const double ramp = static_cast<double>(c.ramp_batches);
  switch (c.scenario) {
    case Scenario::Sudden:
      return batch >= c.period ? peak : 0.0;
    case Scenario::SuddenGradual: {
      if (batch < c.period) return 0.0;
      const long into = batch % c.period;
      return peak * std::min(1.0, static_cast<double>(into + 1) / c.period);
    }
    case Scenario::GradIncrease:
      return n_batches > 1 ? peak * static_cast<double>(batch) / static_cast<double>(n_batches - 1) : 0.0;
    case Scenario::GradPlateau:
      return peak * std::min(1.0, static_cast<double>(batch) / ramp);
    case Scenario::GradDecrease:
      if (batch <= c.ramp_batches) return peak * static_cast<double>(batch) / ramp;
      return peak * std::max(0.0, (2.0 * ramp - static_cast<double>(batch)) / ramp);
  }
  return 0.0;
}

// Drift-pool classes eligible at `batch`: for the sudden scenarios the one
// class introduced at the start of the current period (class k-1 in period
// k), for the gradual ones every class.
inline std::vector<int> active_drift_classes(const CompositeConfig& c, long batch, int n_classes) {
  std::vector<int> out;
  if (c.scenario == Scenario::Sudden || c.scenario == Scenario::SuddenGradual) {
    if (batch >= c.period) out.push_back(static_cast<int>((batch / c.period - 1) % n_classes));
  } else {
    for (int k = 0; k < n_classes; ++k) out.push_back(k);
  }
  return out;
}

inline LabeledStream gen_composite(const StreamSpec& spec, const SamplePool& base, const SamplePool& drift) {
  spec.validate();
  const auto& c = spec.composite;
  if (base.dim() != drift.dim())
    throw DimensionError("composite: base pool has " + std::to_string(base.dim()) + " features, drift pool " +
                         std::to_string(drift.dim()));
  if (base.n_classes() != drift.n_classes()) throw Error("composite: base and drift pools have different label sets");
  if (base.size() == 0 || drift.size() == 0) throw Error("composite: empty pool");

  const int k = base.n_classes();
  std::vector<std::vector<int>> drift_by_class(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < drift.size(); ++i) drift_by_class[static_cast<std::size_t>(drift.labels[static_cast<std::size_t>(i)])].push_back(static_cast<int>(i));

  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<Eigen::Index> pick_base(0, base.size() - 1);
  LabeledStream s;
  s.dim = static_cast<int>(base.dim());
  s.n_classes = k;
  s.unstructured = true;
  const long nb = spec.n_batches();
  const int bs = spec.batch_size;
  if (c.scenario == Scenario::Sudden || c.scenario == Scenario::SuddenGradual)
    for (long b = c.period; b < nb; b += c.period) s.drift_truth.push_back(b);

  std::vector<int> order(static_cast<std::size_t>(bs));
  for (long b = 0; b < nb; ++b) {
    const auto classes = active_drift_classes(c, b, k);
    std::vector<int> usable;
    for (int cls : classes)
      if (!drift_by_class[static_cast<std::size_t>(cls)].empty()) usable.push_back(cls);
    int n_drift = static_cast<int>(std::lround(mixing_fraction(c, b, nb) * bs));
    if (usable.empty()) n_drift = 0;
    // Random positions for the drift rows.
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> is_drift(static_cast<std::size_t>(bs), 0);
    for (int i = 0; i < n_drift; ++i) is_drift[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

    Batch batch{b, Matrix(bs, s.dim)};
    Labels y(static_cast<std::size_t>(bs));
    for (int r = 0; r < bs; ++r) {
      if (is_drift[static_cast<std::size_t>(r)]) {
        std::uniform_int_distribution<std::size_t> pc(0, usable.size() - 1);
        const auto& members = drift_by_class[static_cast<std::size_t>(usable[pc(rng)])];
        std::uniform_int_distribution<std::size_t> pm(0, members.size() - 1);
        const int idx = members[pm(rng)];
        batch.features.row(r) = drift.features.row(idx);
        y[static_cast<std::size_t>(r)] = drift.labels[static_cast<std::size_t>(idx)];
      } else {
        const Eigen::Index idx = pick_base(rng);
        batch.features.row(r) = base.features.row(idx);
        y[static_cast<std::size_t>(r)] = base.labels[static_cast<std::size_t>(idx)];
      }
    }
    s.batches.push_back(std::move(batch));
    s.labels.push_back(std::move(y));
  }
  return s;
}

inline SamplePool load_pool(const PoolSource& src) { return load_csv(src.path); }

// Builds whichever stream the spec names.
inline LabeledStream make_stream(const StreamSpec& spec) {
  spec.validate();
  switch (spec.generator) {
    case GeneratorKind::Sea: return gen_sea(spec);
    case GeneratorKind::Sine2: return gen_sine2(spec);
    case GeneratorKind::StationaryGaussian: return gen_stationary_gaussian(spec);
    case GeneratorKind::Csv: return stream_from_pool(load_csv(spec.csv_path), spec.batch_size, spec.total_samples);
    case GeneratorKind::Composite: {
      const auto& c = spec.composite;
      std::optional<std::pair<SamplePool, SamplePool>> synth;
      if (c.base.kind == PoolSource::Kind::Clusters || c.drift.kind == PoolSource::Kind::Clusters)
        synth = make_cluster_pools(c.clusters, spec.seed);
      const SamplePool base = c.base.kind == PoolSource::Kind::Csv ? load_pool(c.base) : synth->first;
      const SamplePool drift = c.drift.kind == PoolSource::Kind::Csv ? load_pool(c.drift) : synth->second;
      return gen_composite(spec, base, drift);
    }
  }
  throw Error("stream: unhandled generator");
}

// ---- lag-of-labels delivery ----------------------------------------------------

struct ScheduledStep {
  const Batch* batch = nullptr;
  std::vector<LabelDelivery> deliveries;  // sorted by for_step
};

// Emits each batch in order together with the label sets that become
// available at that step. The lag for a batch is drawn when it is emitted;
// deliveries falling past the end of the stream are never emitted.
class LabelScheduler {
 public:
  LabelScheduler(const LabeledStream& stream, LagPolicy policy)
      : stream_(&stream), policy_(policy), rng_(policy.seed) {
    policy_.validate();
  }

  bool done() const { return next_ >= stream_->size(); }

  ScheduledStep next() {
    if (done()) throw Error("label scheduler: stream exhausted");
    const Step n = static_cast<Step>(next_);
    const int lag = policy_.sample(rng_);
    lags_.push_back(lag);
    pending_.emplace(n + lag, n);

    ScheduledStep out;
    out.batch = &stream_->batches[next_];
    auto [lo, hi] = pending_.equal_range(n);
    std::vector<Step> due;
    for (auto it = lo; it != hi; ++it) due.push_back(it->second);
    pending_.erase(lo, hi);
    std::sort(due.begin(), due.end());
    for (Step f : due) out.deliveries.push_back(LabelDelivery{n, f, stream_->labels[static_cast<std::size_t>(f)]});
    ++next_;
    return out;
  }

  // Lag drawn for each emitted batch, by step.
  const std::vector<int>& lags() const { return lags_; }

 private:
  const LabeledStream* stream_;
  LagPolicy policy_;
  std::mt19937_64 rng_;
  std::size_t next_ = 0;
  std::multimap<Step, Step> pending_;  // delivery step -> for_step
  std::vector<int> lags_;
};

// Whole schedule at once; convenient for tests and offline analysis.
inline std::vector<ScheduledStep> schedule_labels(const LabeledStream& stream, const LagPolicy& policy) {
  LabelScheduler sched(stream, policy);
  std::vector<ScheduledStep> out;
  out.reserve(stream.size());
  while (!sched.done()) out.push_back(sched.next());
  return out;
}

}  // namespace cdcsde
