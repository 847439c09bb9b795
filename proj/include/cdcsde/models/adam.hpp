#pragma once

#include "cdcsde/core.hpp"

#include <cstdint>

namespace cdcsde::models {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a flat parameter vector; `step` descends along `grad`.
class Adam {
 public:
  Adam(Eigen::Index n, AdamConfig cfg = {}) : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

  void step(Vector& params, const Vector& grad) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
  }

  long updates() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

// Shared minibatch training settings.
struct TrainConfig {
  int epochs = 30;
  int minibatch = 64;
  double lr = 1e-3;
  // Lower bound on optimizer updates; small training sets get extra epochs.
  int min_updates = 0;
  std::uint64_t seed = 0;

  int effective_epochs(Eigen::Index n_samples) const {
    if (epochs <= 0) return 0;
    const long per_epoch = (n_samples + minibatch - 1) / minibatch;
    if (per_epoch <= 0) return epochs;
    const long needed = (min_updates + per_epoch - 1) / per_epoch;
    return static_cast<int>(std::max<long>(epochs, needed));
  }
};

}  // namespace cdcsde::models
