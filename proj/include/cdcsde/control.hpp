#pragma once

// Per-signal statistical control and the tailored majority vote.
//
// Each signal keeps the progressive average p_i of its scores and s_i, the
// population standard deviation of p_1..p_i. Against the running minimum of
// p + s it reports
//   Drift    if p_i + s_i > p_min + 3 s_min
//   Warning  if p_i + s_i > p_min + 2 s_min
//   Safe     if p_i + s_i < p_min + 2 s_min   (and forgets its warning zone)

#include "cdcsde/core.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <set>
#include <vector>

namespace cdcsde::control {

inline constexpr int kSignals = 6;

struct ControlConfig {
  int warmup = 5;
  double eps_floor = 1e-8;
};

class ControlState {
 public:
  explicit ControlState(ControlConfig cfg = {}) : cfg_(cfg) {}

  Zone observe(double q, Step step) {
    if (!std::isfinite(q)) throw Error("control: non-finite score at step " + std::to_string(step));
    ++count_;
    sum_ += q;
    p_ = sum_ / static_cast<double>(count_);
    // Welford over the progressive averages.
    const double delta = p_ - p_mean_;
    p_mean_ += delta / static_cast<double>(count_);
    p_m2_ += delta * (p_ - p_mean_);
    s_ = std::sqrt(std::max(0.0, p_m2_ / static_cast<double>(count_)));

    if (count_ < cfg_.warmup) {
      zone_ = Zone::Safe;
      return zone_;
    }
    // Minimum first: a new minimum is never itself an alarm.
    if (!has_min_ || p_ + s_ < p_min_ + s_min_) {
      p_min_ = p_;
      s_min_ = s_;
      has_min_ = true;
    }
    const double s_ref = std::max(s_min_, cfg_.eps_floor);
    const double level = p_ + s_;
    if (level > p_min_ + 3.0 * s_ref) {
      zone_ = Zone::Drift;
      add_warning(step);
    } else if (level > p_min_ + 2.0 * s_ref) {
      zone_ = Zone::Warning;
      add_warning(step);
    } else if (level < p_min_ + 2.0 * s_ref) {
      zone_ = Zone::Safe;
      warning_.clear();
    }
    return zone_;
  }

  void reset() { *this = ControlState(cfg_); }

  long count() const { return count_; }
  double p() const { return p_; }
  double s() const { return s_; }
  double p_min() const { return p_min_; }
  double s_min() const { return s_min_; }
  bool has_min() const { return has_min_; }
  Zone zone() const { return zone_; }
  const std::vector<Step>& warning_batches() const { return warning_; }
  const ControlConfig& config() const { return cfg_; }

  // Raw accumulator access for checkpointing.
  struct Raw {
    long count;
    double sum, p, s, p_mean, p_m2, p_min, s_min;
    bool has_min;
    Zone zone;
    std::vector<Step> warning;
  };
  Raw raw() const { return {count_, sum_, p_, s_, p_mean_, p_m2_, p_min_, s_min_, has_min_, zone_, warning_}; }
  static ControlState from_raw(ControlConfig cfg, const Raw& r) {
    ControlState s(cfg);
    s.count_ = r.count;
    s.sum_ = r.sum;
    s.p_ = r.p;
    s.s_ = r.s;
    s.p_mean_ = r.p_mean;
    s.p_m2_ = r.p_m2;
    s.p_min_ = r.p_min;
    s.s_min_ = r.s_min;
    s.has_min_ = r.has_min;
    s.zone_ = r.zone;
    s.warning_ = r.warning;
    return s;
  }

 private:
  void add_warning(Step step) {
    if (warning_.empty() || warning_.back() < step) warning_.push_back(step);
  }

  ControlConfig cfg_;
  long count_ = 0;
  double sum_ = 0.0;
  double p_ = 0.0;
  double s_ = 0.0;
  double p_mean_ = 0.0;
  double p_m2_ = 0.0;
  double p_min_ = 0.0;
  double s_min_ = 0.0;
  bool has_min_ = false;
  Zone zone_ = Zone::Safe;
  std::vector<Step> warning_;
};

using SignalStates = std::array<ControlState, kSignals>;

inline SignalStates make_states(ControlConfig cfg) {
  return {ControlState(cfg), ControlState(cfg), ControlState(cfg), ControlState(cfg), ControlState(cfg), ControlState(cfg)};
}

// ---- voting ----------------------------------------------------------------------

enum class TriggerRule { None, KpiModule, Majority };

inline const char* to_string(TriggerRule r) {
  switch (r) {
    case TriggerRule::None: return "none";
    case TriggerRule::KpiModule: return "kpi-module";
    case TriggerRule::Majority: return "majority";
  }
  return "?";
}

// Which signals take part. Signal 1 (index 0) fires alone; the others need a
// majority of the included ones: ceil((m + 1) / 2) of m, i.e. 3 of 5.
struct VoteRule {
  std::array<bool, kSignals> included{true, true, true, true, true, true};

  int others_included() const {
    int m = 0;
    for (int i = 1; i < kSignals; ++i) m += included[static_cast<std::size_t>(i)];
    return m;
  }
  int majority_threshold() const {
    const int m = others_included();
    return m == 0 ? 0 : (m + 2) / 2;
  }
};

struct EnsembleDecision {
  bool drift = false;
  TriggerRule rule = TriggerRule::None;
  std::array<Zone, kSignals> votes{};
  std::vector<Step> retrain_steps;
  bool empty_union_fallback = false;
};

// Sorted union of the signals' current warning zones; the last `fallback`
// steps up to `now` when every zone is empty.
inline std::vector<Step> collect_retrain_steps(const SignalStates& states, Step now, int fallback, Step first_step,
                                               bool* used_fallback = nullptr) {
  std::set<Step> u;
  for (const auto& s : states) u.insert(s.warning_batches().begin(), s.warning_batches().end());
  if (used_fallback) *used_fallback = u.empty();
  if (u.empty())
    for (Step t = std::max(first_step, now - fallback + 1); t <= now; ++t) u.insert(t);
  return {u.begin(), u.end()};
}

// `present[i]` marks signals that were observed this step; the rest vote Safe.
inline EnsembleDecision vote(const SignalStates& states, const std::array<bool, kSignals>& present, const VoteRule& rule = {}) {
  EnsembleDecision d;
  int drift_votes = 0;
  for (int i = 0; i < kSignals; ++i) {
    const auto k = static_cast<std::size_t>(i);
    d.votes[k] = (present[k] && rule.included[k]) ? states[k].zone() : Zone::Safe;
    if (i > 0 && d.votes[k] == Zone::Drift) ++drift_votes;
  }
  const int threshold = rule.majority_threshold();
  if (d.votes[0] == Zone::Drift) {
    d.drift = true;
    d.rule = TriggerRule::KpiModule;
  } else if (threshold > 0 && drift_votes >= threshold) {
    d.drift = true;
    d.rule = TriggerRule::Majority;
  }
  return d;
}

// vote() plus retraining-set selection when drift fires.
inline EnsembleDecision decide(const SignalStates& states, const std::array<bool, kSignals>& present, Step now, int fallback,
                               Step first_step, const VoteRule& rule = {}) {
  EnsembleDecision d = vote(states, present, rule);
  if (d.drift) d.retrain_steps = collect_retrain_steps(states, now, fallback, first_step, &d.empty_union_fallback);
  return d;
}

}  // namespace cdcsde::control
