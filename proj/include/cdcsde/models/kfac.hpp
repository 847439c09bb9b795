#pragma once

// Kronecker-factored empirical Fisher for the classifier layers, and the
// natural-gradient squared norm used as the gradient-change signal.
//
// For a dense layer with augmented input a = [x; 1] and pre-activation
// gradient g, the per-sample weight gradient is g a^T, so the Fisher block
// E[vec(g a^T) vec(g a^T)^T] is approximated by A (x) G with A = E[a a^T] and
// G = E[g g^T]. The damped inverse applied to a gradient matrix W is
// (G + lambda I)^-1 W (A + lambda I)^-1.

#include "cdcsde/models/mlp.hpp"

namespace cdcsde::models {

struct KfacFactors {
  Matrix A;  // (in+1) x (in+1)
  Matrix G;  // out x out
  Matrix A_inv;  // (A + lambda I)^-1
  Matrix G_inv;  // (G + lambda I)^-1
};

struct KfacState {
  std::vector<KfacFactors> layers;
  double damping = 1e-3;
  long u = 0;  // parameter count of the classifier
};

inline Matrix with_bias_column(const Matrix& a) {
  Matrix out(a.rows(), a.cols() + 1);
  out.leftCols(a.cols()) = a;
  out.col(a.cols()).setOnes();
  return out;
}

inline Matrix damped_inverse(const Matrix& m, double damping) {
  const Matrix damped = m + damping * Matrix::Identity(m.rows(), m.cols());
  Eigen::LLT<Matrix> llt(damped);
  if (llt.info() != Eigen::Success) throw Error("kfac: damped factor is not positive definite");
  return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

// Per-layer (augmented input, per-sample pre-activation gradient) pairs for
// the summed cross-entropy at the true labels.
struct LayerStatistics {
  std::vector<Matrix> inputs;     // N x (in+1)
  std::vector<Matrix> pre_grads;  // N x out
};

inline LayerStatistics layer_statistics(const MlpParams& net, const Matrix& x, const Labels& y) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DimensionError("kfac: features and labels differ in length");
  const ForwardCache c = forward(net, x);
  const Matrix t = one_hot(y, net.output_dim());
  BackwardResult b = backward(net, c, c.output - t);
  LayerStatistics s;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    s.inputs.push_back(with_bias_column(c.inputs[l]));
    s.pre_grads.push_back(std::move(b.pre_grads[l]));
  }
  return s;
}

inline KfacState kfac_from_factors(std::vector<std::pair<Matrix, Matrix>> factors, double damping, long u) {
  if (!(damping > 0.0)) throw Error("kfac: damping must be positive");
  KfacState st;
  st.damping = damping;
  st.u = u;
  for (auto& [a, g] : factors) {
    KfacFactors f;
    f.A_inv = damped_inverse(a, damping);
    f.G_inv = damped_inverse(g, damping);
    f.A = std::move(a);
    f.G = std::move(g);
    st.layers.push_back(std::move(f));
  }
  return st;
}

inline KfacState compute_kfac(const MlpParams& net, const Matrix& x, const Labels& y, double damping = 1e-3) {
  if (x.rows() == 0) throw Error("kfac: no labeled samples");
  const LayerStatistics s = layer_statistics(net, x, y);
  const double n = static_cast<double>(x.rows());
  std::vector<std::pair<Matrix, Matrix>> factors;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix a = s.inputs[l].transpose() * s.inputs[l] / n;
    Matrix g = s.pre_grads[l].transpose() * s.pre_grads[l] / n;
    factors.emplace_back(std::move(a), std::move(g));
  }
  return kfac_from_factors(std::move(factors), damping, net.parameter_count());
}

// Gradient of the mean cross-entropy per layer as [W | b] (out x (in+1)).
inline std::vector<Matrix> layer_gradients(const MlpParams& net, const Matrix& x, const Labels& y) {
  const LayerStatistics s = layer_statistics(net, x, y);
  const double n = static_cast<double>(x.rows());
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) out.push_back(s.pre_grads[l].transpose() * s.inputs[l] / n);
  return out;
}

// Sum over layers of <grad_N, grad_N>, divided by u, where
// grad_N = (G + lambda I)^-1 grad_W (A + lambda I)^-1.
inline double natural_gradient_sq_norm(const MlpParams& net, const KfacState& kfac, const Matrix& x, const Labels& y) {
  if (y.empty()) throw Error("natural_gradient_sq_norm: missing labels");
  if (x.cols() != net.input_dim()) throw DimensionError("natural_gradient_sq_norm: feature dimension mismatch");
  if (kfac.layers.size() != net.layers.size()) throw DimensionError("natural_gradient_sq_norm: K-FAC state does not match model");
  const auto grads = layer_gradients(net, x, y);
  double total = 0.0;
  for (std::size_t l = 0; l < grads.size(); ++l) {
    const Matrix nat = kfac.layers[l].G_inv * grads[l] * kfac.layers[l].A_inv;
    total += nat.squaredNorm();
  }
  return total / static_cast<double>(kfac.u);
}

}  // namespace cdcsde::models
