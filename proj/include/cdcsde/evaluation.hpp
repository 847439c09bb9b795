#pragma once

// Stream metrics: mean accuracy (MA), mean time between false alarms (MTFA),
// mean time to detection (MTD), missed detection rate (MDR) and total alarms
// (TD). All times are in batches.

#include "cdcsde/serving.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cdcsde::evaluation {

enum class Attribution {
  FirstAfter,  // first alarm in [t_j, t_{j+1}) detects drift j
  Windowed,    // ... and only if it lies within `window` batches of t_j
};

struct AttributionConfig {
  Attribution rule = Attribution::FirstAfter;
  int window = 100;
};

struct MetricSet {
  double ma = 0.0;
  std::optional<double> mtfa;  // needs at least two false alarms
  std::optional<double> mtd;
  std::optional<double> mdr;  // absent without ground truth
  int td = 0;
  int detected = 0;
  int missed = 0;
  int false_alarms = 0;
};

struct Attributed {
  std::vector<std::pair<Step, Step>> detections;  // (truth, alarm)
  std::vector<Step> missed;
  std::vector<Step> false_alarms;
};

inline Attributed attribute_alarms(std::vector<Step> alarms, std::vector<Step> truth, const AttributionConfig& cfg = {}) {
  std::sort(alarms.begin(), alarms.end());
  std::sort(truth.begin(), truth.end());
  Attributed out;
  std::vector<bool> used(alarms.size(), false);
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const Step lo = truth[j];
    const Step hi = j + 1 < truth.size() ? truth[j + 1] : std::numeric_limits<Step>::max();
    bool hit = false;
    for (std::size_t a = 0; a < alarms.size(); ++a) {
      if (alarms[a] < lo || alarms[a] >= hi) continue;
      if (cfg.rule == Attribution::Windowed && alarms[a] - lo > cfg.window) break;
      out.detections.emplace_back(lo, alarms[a]);
      used[a] = true;
      hit = true;
      break;
    }
    if (!hit) out.missed.push_back(lo);
  }
  for (std::size_t a = 0; a < alarms.size(); ++a)
    if (!used[a]) out.false_alarms.push_back(alarms[a]);
  return out;
}

// Pure function of accuracy, alarm steps and truth steps. `first`/`last`
// bound the served steps; alarms outside them are an error and truth points
// outside them are ignored (they cannot be detected).
inline MetricSet compute_metrics(double ma, const std::vector<Step>& alarms, const std::vector<Step>& truth, Step first,
                                 Step last, const AttributionConfig& cfg = {}) {
  for (Step a : alarms)
    if (a < first || a > last)
      throw Error("metrics: alarm at step " + std::to_string(a) + " outside the report range [" + std::to_string(first) + ", " +
                  std::to_string(last) + "]");
  std::vector<Step> t;
  for (Step s : truth)
    if (s >= first && s <= last) t.push_back(s);
  MetricSet m;
  m.ma = ma;
  m.td = static_cast<int>(alarms.size());
  if (truth.empty()) {
    m.false_alarms = m.td;
    return m;
  }
  const Attributed at = attribute_alarms(alarms, t, cfg);
  m.detected = static_cast<int>(at.detections.size());
  m.missed = static_cast<int>(at.missed.size());
  m.false_alarms = static_cast<int>(at.false_alarms.size());
  m.mdr = t.empty() ? 0.0 : static_cast<double>(m.missed) / static_cast<double>(t.size());
  if (!at.detections.empty()) {
    double s = 0.0;
    for (const auto& [tr, al] : at.detections) s += static_cast<double>(al - tr);
    m.mtd = s / static_cast<double>(at.detections.size());
  }
  if (at.false_alarms.size() >= 2) {
    double s = 0.0;
    for (std::size_t i = 1; i < at.false_alarms.size(); ++i) s += static_cast<double>(at.false_alarms[i] - at.false_alarms[i - 1]);
    m.mtfa = s / static_cast<double>(at.false_alarms.size() - 1);
  }
  return m;
}

inline MetricSet compute_metrics(const serving::RunReport& r, const AttributionConfig& cfg = {}) {
  return compute_metrics(r.mean_accuracy(), r.alarms, r.drift_truth, r.first_step, r.last_step, cfg);
}

// Same serving harness, drift decided by a single baseline detector.
inline std::pair<serving::RunReport, MetricSet> run_baseline(const LabeledStream& stream, const LagPolicy& lag, DetectorKind kind,
                                                             serving::ServingConfig cfg, const AttributionConfig& attr = {}) {
  switch (kind) {
    case DetectorKind::Ddm: cfg.method = serving::Method::Ddm; break;
    case DetectorKind::PageHinkley: cfg.method = serving::Method::PageHinkley; break;
    case DetectorKind::Ewma: cfg.method = serving::Method::Ewma; break;
  }
  serving::RunReport r = serving::run_stream(stream, lag, cfg);
  MetricSet m = compute_metrics(r, attr);
  return {std::move(r), m};
}

// ---- aggregation and rendering ------------------------------------------------------

struct Summary {
  int runs = 0;
  double ma_mean = 0.0, ma_std = 0.0;
  std::optional<double> mtfa, mtd, mdr;  // means over runs where defined
  double td_mean = 0.0;
};

inline Summary summarize(const std::vector<MetricSet>& ms) {
  Summary s;
  s.runs = static_cast<int>(ms.size());
  if (ms.empty()) return s;
  auto mean_opt = [&](auto get) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& m : ms)
      if (auto v = get(m)) {
        sum += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / n;
  };
  double sum = 0.0, sq = 0.0, td = 0.0;
  for (const auto& m : ms) {
    sum += m.ma;
    sq += m.ma * m.ma;
    td += m.td;
  }
  const double n = static_cast<double>(ms.size());
  s.ma_mean = sum / n;
  s.ma_std = std::sqrt(std::max(0.0, sq / n - s.ma_mean * s.ma_mean));
  s.td_mean = td / n;
  s.mtfa = mean_opt([](const MetricSet& m) { return m.mtfa; });
  s.mtd = mean_opt([](const MetricSet& m) { return m.mtd; });
  s.mdr = mean_opt([](const MetricSet& m) { return m.mdr; });
  return s;
}

inline std::string fmt_opt(const std::optional<double>& v, int precision = 2) {
  if (!v) return "-";
  std::ostringstream o;
  o << std::fixed << std::setprecision(precision) << *v;
  return o.str();
}

inline std::string fmt(double v, int precision = 2) { return fmt_opt(std::optional<double>(v), precision); }

inline const char* kMetricsCsvHeader = "label,seed,MA,MTFA,MTD,MDR,TD";

inline std::string metrics_csv_row(const std::string& label, std::uint64_t seed, const MetricSet& m) {
  std::ostringstream o;
  o << label << ',' << seed << ',' << fmt(m.ma, 6) << ',' << fmt_opt(m.mtfa, 4) << ',' << fmt_opt(m.mtd, 4) << ','
    << fmt_opt(m.mdr, 4) << ',' << m.td;
  return o.str();
}

// Aligned text table; MA as a percentage, column order MA, MTFA, MTD, MDR, TD.
inline std::string summary_table(const std::vector<std::pair<std::string, Summary>>& rows) {
  std::vector<std::array<std::string, 7>> cells;
  cells.push_back({"", "runs", "MA(%)", "MTFA", "MTD", "MDR", "TD"});
  for (const auto& [label, s] : rows) {
    std::optional<double> mdr_pct;
    if (s.mdr) mdr_pct = *s.mdr * 100.0;
    cells.push_back({label, std::to_string(s.runs), fmt(s.ma_mean * 100.0) + " ± " + fmt(s.ma_std * 100.0), fmt_opt(s.mtfa),
                     fmt_opt(s.mtd), fmt_opt(mdr_pct), fmt(s.td_mean, 1)});
  }
  std::array<std::size_t, 7> width{};
  auto display_len = [](const std::string& x) {
    std::size_t n = 0;
    for (unsigned char c : x) n += (c & 0xC0) != 0x80;  // count UTF-8 code points
    return n;
  };
  for (const auto& r : cells)
    for (std::size_t c = 0; c < 7; ++c) width[c] = std::max(width[c], display_len(r[c]));
  std::ostringstream o;
  for (const auto& r : cells) {
    for (std::size_t c = 0; c < 7; ++c) {
      const std::string pad(width[c] - display_len(r[c]), ' ');
      if (c == 0)
        o << r[c] << pad;
      else
        o << "  " << pad << r[c];
    }
    o << '\n';
  }
  return o.str();
}

}  // namespace cdcsde::evaluation
