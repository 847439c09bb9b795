#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdcsde {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Labels = std::vector<int>;
using Step = std::int64_t;

// Base error for every contract violation raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Training diverged; carries the optimizer update at which it happened.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long update)
      : Error(what + " (update " + std::to_string(update) + ")"), update_(update) {}
  long update() const noexcept { return update_; }

 private:
  long update_;
};

enum class Zone { Safe, Warning, Drift };

inline const char* to_string(Zone z) {
  switch (z) {
    case Zone::Safe: return "safe";
    case Zone::Warning: return "warning";
    case Zone::Drift: return "drift";
  }
  return "?";
}

inline Zone zone_from_string(const std::string& s) {
  if (s == "safe") return Zone::Safe;
  if (s == "warning") return Zone::Warning;
  if (s == "drift") return Zone::Drift;
  throw Error("unknown zone '" + s + "'");
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Gather a subset of rows.
inline Matrix take_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

inline Matrix vstack(const std::vector<const Matrix*>& parts, Eigen::Index cols) {
  Eigen::Index rows = 0;
  for (const auto* p : parts) rows += p->rows();
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto* p : parts) {
    if (p->rows() == 0) continue;
    if (p->cols() != cols) throw DimensionError("vstack: column mismatch");
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

}  // namespace cdcsde
