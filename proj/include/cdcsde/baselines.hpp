#pragma once

// Single-signal baseline detectors run on the delayed-KPI series.

#include "cdcsde/core.hpp"

#include <string>
#include <vector>

namespace cdcsde::evaluation {

enum class DetectorKind { Ddm, PageHinkley, Ewma };

inline const char* to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::Ddm: return "ddm";
    case DetectorKind::PageHinkley: return "ph";
    case DetectorKind::Ewma: return "ewma";
  }
  return "?";
}

struct DdmParams {
  int warmup = 5;
  double warning_sigmas = 2.0;
  double drift_sigmas = 3.0;
};

struct PhParams {
  double delta = 0.005;
  // Per-sample threshold of 50 rescaled to batch-level KPIs (50 / 64).
  double lambda = 50.0 / 64.0;
  double alpha = 0.9999;
  int warmup = 5;
};

struct EwmaParams {
  double decay = 0.2;  // weight on the previous estimate
  double warning_mult = 2.0;
  double drift_mult = 3.0;  // L
  int warmup = 5;
};

struct BaselineParams {
  DdmParams ddm;
  PhParams ph;
  EwmaParams ewma;
};

class BaselineDetector {
 public:
  BaselineDetector(DetectorKind kind, BaselineParams params = {}) : kind_(kind), params_(params) {}

  DetectorKind kind() const { return kind_; }

  Zone step(double kpi) {
    if (!(kpi >= 0.0 && kpi <= 1.0)) throw Error("baseline: KPI " + std::to_string(kpi) + " outside [0,1]");
    ++n_;
    switch (kind_) {
      case DetectorKind::Ddm: zone_ = step_ddm(kpi); break;
      case DetectorKind::PageHinkley: zone_ = step_ph(kpi); break;
      case DetectorKind::Ewma: zone_ = step_ewma(kpi); break;
    }
    return zone_;
  }

  void reset() { *this = BaselineDetector(kind_, params_); }

  Zone zone() const { return zone_; }
  long count() const { return n_; }
  double estimate() const { return kind_ == DetectorKind::Ewma ? z_ : mean_; }
  double ph_statistic() const { return ph_m_ - ph_min_; }

 private:
  // Running mean of the KPI as p, binomial deviation sqrt(p(1-p)/i).
  Zone step_ddm(double x) {
    mean_ += (x - mean_) / static_cast<double>(n_);
    const double s = std::sqrt(mean_ * (1.0 - mean_) / static_cast<double>(n_));
    if (n_ < params_.ddm.warmup) return Zone::Safe;
    if (!has_min_ || mean_ + s < p_min_ + s_min_) {
      p_min_ = mean_;
      s_min_ = s;
      has_min_ = true;
    }
    const double level = mean_ + s;
    if (level > p_min_ + params_.ddm.drift_sigmas * s_min_) return Zone::Drift;
    if (level > p_min_ + params_.ddm.warning_sigmas * s_min_) return Zone::Warning;
    return Zone::Safe;
  }

  // One-sided (increase) Page-Hinkley with fading factor alpha.
  Zone step_ph(double x) {
    mean_ += (x - mean_) / static_cast<double>(n_);
    ph_m_ = params_.ph.alpha * ph_m_ + (x - mean_ - params_.ph.delta);
    ph_min_ = std::min(ph_min_, ph_m_);
    if (n_ < params_.ph.warmup) return Zone::Safe;
    return (ph_m_ - ph_min_ > params_.ph.lambda) ? Zone::Drift : Zone::Safe;
  }

  // Exponentially weighted estimate against mean + L * stdev of the estimator.
  Zone step_ewma(double x) {
    const double d = params_.ewma.decay;
    z_ = n_ == 1 ? x : d * z_ + (1.0 - d) * x;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
    if (n_ < params_.ewma.warmup) return Zone::Safe;
    const double var = m2_ / static_cast<double>(n_);
    const double sd_z = std::sqrt(var * (1.0 - d) / (1.0 + d) * (1.0 - std::pow(d, 2.0 * static_cast<double>(n_))));
    if (z_ > mean_ + params_.ewma.drift_mult * sd_z && sd_z > 0.0) return Zone::Drift;
    if (z_ > mean_ + params_.ewma.warning_mult * sd_z && sd_z > 0.0) return Zone::Warning;
    return Zone::Safe;
  }

  DetectorKind kind_;
  BaselineParams params_;
  long n_ = 0;
  Zone zone_ = Zone::Safe;
  double mean_ = 0.0;
  // DDM
  double p_min_ = 0.0, s_min_ = 0.0;
  bool has_min_ = false;
  // PH
  double ph_m_ = 0.0, ph_min_ = 0.0;
  // EWMA
  double z_ = 0.0, m2_ = 0.0;
};

}  // namespace cdcsde::evaluation
