#include "cdcsde/models/autoencoder.hpp"
#include "cdcsde/models/kfac.hpp"
#include "cdcsde/models/serialize.hpp"
#include "cdcsde/models/spn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace cdcsde;
using namespace cdcsde::models;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Labels random_labels(Eigen::Index n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, k - 1);
  Labels y(static_cast<std::size_t>(n));
  for (auto& v : y) v = u(rng);
  return y;
}

// Central differences of f at theta.
template <class F>
Vector numeric_gradient(F&& f, Vector theta, double h = 1e-6) {
  Vector g(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta(i);
    theta(i) = keep + h;
    const double up = f(theta);
    theta(i) = keep - h;
    const double down = f(theta);
    theta(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

MlpParams tiny_classifier(Eigen::Index in, int k, std::vector<int> hidden, Activation act, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MlpParams net = init_mlp(in, hidden, k, act, Head::Softmax, rng);
  for (auto& l : net.layers) l.bias = Vector::Random(l.out()) * 0.1;
  return net;
}

// Dense Kronecker product a (x) b.
Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Vector vec(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

}  // namespace

// ---- gradients ------------------------------------------------------------------

TEST(Gradients, ClassifierMatchesFiniteDifferences) {
  const Matrix x = random_matrix(12, 3, 1);
  const Labels y = random_labels(12, 3, 2);
  for (auto act : {Activation::Tanh, Activation::Identity}) {
    MlpParams net = tiny_classifier(3, 3, {4, 5}, act, 3);
    net.input = Standardizer::fit(x);
    Vector analytic;
    cross_entropy(net, x, y, &analytic);
    MlpParams work = net;
    const Vector numeric = numeric_gradient(
        [&](const Vector& t) {
          unpack(work, t);
          return cross_entropy(work, x, y);
        },
        pack(net));
    EXPECT_LE(relative_error(analytic, numeric), 1e-4) << to_string(act);
  }
}

TEST(Gradients, ReluClassifierAwayFromKinks) {
  const Matrix x = random_matrix(10, 2, 4);
  const Labels y = random_labels(10, 2, 5);
  MlpParams net = tiny_classifier(2, 2, {6}, Activation::Relu, 6);
  Vector analytic;
  cross_entropy(net, x, y, &analytic);
  MlpParams work = net;
  const Vector numeric = numeric_gradient(
      [&](const Vector& t) {
        unpack(work, t);
        return cross_entropy(work, x, y);
      },
      pack(net), 1e-7);
  EXPECT_LE(relative_error(analytic, numeric), 1e-4);
}

TEST(Gradients, AutoencoderMatchesFiniteDifferences) {
  const Matrix x = random_matrix(9, 4, 7);
  for (auto act : {Activation::Tanh, Activation::Identity}) {
    AutoencoderConfig cfg;
    cfg.bottleneck = 2;
    cfg.activation = act;
    AutoencoderModel ae = init_autoencoder(4, cfg);
    ae.encoder.input = Standardizer::fit(x);
    for (auto* l : {&ae.encoder.layers[0], &ae.decoder.layers[0]}) l->bias = Vector::Random(l->out()) * 0.1;
    const MlpParams net = detail::joined(ae);
    Vector analytic;
    autoencoder_loss(net, x, &analytic);
    MlpParams work = net;
    const Vector numeric = numeric_gradient(
        [&](const Vector& t) {
          unpack(work, t);
          return autoencoder_loss(work, x);
        },
        pack(net));
    EXPECT_LE(relative_error(analytic, numeric), 1e-4) << to_string(act);
  }
}

TEST(Gradients, SpnMatchesFiniteDifferences) {
  const Matrix x = random_matrix(15, 4, 8);
  SpnConfig cfg;
  cfg.groups = 2;
  cfg.components = 3;
  SpnModel m = init_spn(x, cfg);
  Vector theta = pack(m);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) += n(rng);
  unpack(m, theta);
  Vector analytic;
  spn_negative_loglik(m, x, &analytic);
  SpnModel work = m;
  const Vector numeric = numeric_gradient(
      [&](const Vector& t) {
        unpack(work, t);
        return spn_negative_loglik(work, x);
      },
      theta);
  EXPECT_LE(relative_error(analytic, numeric), 1e-4);
}

// ---- classifier ---------------------------------------------------------------------

TEST(Classifier, SeparatesWellSeparatedBlobs) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(400, 2);
  Labels y(400);
  for (int i = 0; i < 400; ++i) {
    y[static_cast<std::size_t>(i)] = i % 2;
    x(i, 0) = n(rng) + (i % 2 ? 3.0 : -3.0);
    x(i, 1) = n(rng);
  }
  ClassifierConfig cfg;
  cfg.train.seed = 1;
  const MlpParams net = train_classifier(x, y, 2, cfg);
  EXPECT_GE(accuracy(y, predict(net, x)), 0.99);
  EXPECT_TRUE(net.theta_star);
}

TEST(Classifier, SingleClassIsRejected) {
  const Matrix x = random_matrix(10, 2, 11);
  try {
    train_classifier(x, Labels(10, 1), 2, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate label set"), std::string::npos);
  }
  EXPECT_THROW(train_classifier(Matrix(0, 2), {}, 2, {}), Error);
}

TEST(Classifier, ZeroEpochsKeepsInitialization) {
  const Matrix x = random_matrix(20, 3, 12);
  const Labels y = random_labels(20, 2, 13);
  ClassifierConfig cfg;
  cfg.train.epochs = 0;
  cfg.train.seed = 4;
  const MlpParams trained = train_classifier(x, y, 2, cfg);
  const MlpParams init = init_classifier(3, 2, cfg);
  EXPECT_EQ(pack(trained), pack(init));
}

TEST(Classifier, NanLossIsReportedWithItsStep) {
  Matrix x = random_matrix(8, 2, 14);
  const Labels y{0, 1, 0, 1, 0, 1, 0, 1};
  MlpParams net = tiny_classifier(2, 2, {3}, Activation::Tanh, 15);
  net.input = Standardizer::fit(x);
  net.layers[0].weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
  ClassifierConfig cfg;
  try {
    train_classifier(x, y, 2, cfg, &net);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.update(), 1);
  }
}

TEST(Softmax, RowsSumToOneAndZeroLayerIsUniform) {
  const Matrix x = random_matrix(30, 4, 16, 5.0);
  MlpParams net = tiny_classifier(4, 5, {8}, Activation::Relu, 17);
  const Matrix p = predict_proba(net, x);
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-6);
  net.layers.back().weights.setZero();
  net.layers.back().bias.setZero();
  const Matrix u = predict_proba(net, x);
  EXPECT_LE((u.array() - 0.2).abs().maxCoeff(), 1e-12);
}

TEST(Softmax, RaisingOneLogitRaisesItsProbability) {
  Matrix logits(1, 3);
  logits << 0.3, -1.0, 2.0;
  const Matrix before = softmax_rows(logits);
  logits(0, 1) += 0.5;
  const Matrix after = softmax_rows(logits);
  EXPECT_GT(after(0, 1), before(0, 1));
}

// ---- autoencoder ----------------------------------------------------------------------

TEST(Autoencoder, RankOneDataIsReconstructed) {
  std::mt19937_64 rng(18);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector dir = random_matrix(8, 1, 19).col(0);
  Matrix x(300, 8);
  for (int i = 0; i < 300; ++i) x.row(i) = n(rng) * dir.transpose();
  AutoencoderConfig cfg;
  cfg.bottleneck = 6;
  cfg.activation = Activation::Identity;
  cfg.train.epochs = 200;
  cfg.train.lr = 1e-2;
  cfg.train.seed = 1;
  const auto ae = train_autoencoder(x, cfg);
  EXPECT_LE(ae.training_loss, 1e-3);
  EXPECT_DOUBLE_EQ(ae.training_loss, reconstruction_mse(ae, x));
}

TEST(Autoencoder, ConstantDataHasNoLoss) {
  const Matrix x = Matrix::Constant(50, 3, 2.5);
  AutoencoderConfig cfg;
  cfg.train.epochs = 5;
  const auto ae = train_autoencoder(x, cfg);
  EXPECT_LE(ae.training_loss, 1e-8);
}

TEST(Autoencoder, LinearZeroBiasScalesQuadratically) {
  AutoencoderModel ae;
  ae.encoder.head = ae.decoder.head = Head::Identity;
  DenseLayer enc{random_matrix(2, 3, 20), Vector::Zero(2), Activation::Identity};
  DenseLayer dec{random_matrix(3, 2, 21), Vector::Zero(3), Activation::Identity};
  ae.encoder.layers = {enc};
  ae.decoder.layers = {dec};
  const Matrix x = random_matrix(10, 3, 22);
  EXPECT_NEAR(reconstruction_mse(ae, 2.0 * x), 4.0 * reconstruction_mse(ae, x), 1e-12);
}

TEST(Autoencoder, IdentityReconstructsExactly) {
  AutoencoderModel ae;
  ae.encoder.head = ae.decoder.head = Head::Identity;
  ae.encoder.layers = {DenseLayer{Matrix::Identity(3, 3), Vector::Zero(3), Activation::Identity}};
  ae.decoder.layers = {DenseLayer{Matrix::Identity(3, 3), Vector::Zero(3), Activation::Identity}};
  EXPECT_EQ(reconstruction_mse(ae, random_matrix(1, 3, 23)), 0.0);
  EXPECT_THROW(reconstruction_mse(ae, random_matrix(1, 4, 23)), DimensionError);
}

// ---- SPN ------------------------------------------------------------------------------

TEST(Spn, SingleGaussianMatchesClosedFormMle) {
  const Matrix x = random_matrix(2000, 1, 24);
  SpnConfig cfg;
  cfg.groups = 1;
  cfg.components = 1;
  cfg.standardize = false;
  cfg.train.epochs = 20;
  cfg.train.lr = 1e-2;
  const SpnModel m = train_spn(x, cfg);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  EXPECT_NEAR(m.groups[0].means(0, 0), mean, 0.1);
  EXPECT_NEAR(sigma_of(m.groups[0].log_scales(0, 0), m.sigma_floor), sd, 0.1);
}

TEST(Spn, TrainingDoesNotLowerLikelihood) {
  const Matrix x = random_matrix(300, 4, 25);
  SpnConfig cfg;
  cfg.train.epochs = 10;
  SpnModel init = init_spn(Standardizer::fit(x).apply(x), cfg);
  init.input = Standardizer::fit(x);
  const SpnModel trained = train_spn(x, cfg);
  EXPECT_GE(spn_loglik(trained, x), spn_loglik(init, x));
}

// Oracle: two-component EM on the same data; the trained SPN must split the
// clusters the same way (each cluster owned by one component).
TEST(Spn, TwoClustersAreSeparatedByComponents) {
  std::mt19937_64 rng(26);
  std::normal_distribution<double> n(0.0, 0.5);
  Matrix x(400, 1);
  for (int i = 0; i < 400; ++i) x(i, 0) = n(rng) + (i < 200 ? -4.0 : 4.0);

  double mu[2] = {-1.0, 1.0}, sd[2] = {1.0, 1.0}, pi[2] = {0.5, 0.5};
  for (int it = 0; it < 100; ++it) {
    double sr[2] = {0, 0}, sx[2] = {0, 0}, sxx[2] = {0, 0};
    for (int i = 0; i < 400; ++i) {
      double r[2];
      for (int c = 0; c < 2; ++c) r[c] = pi[c] * std::exp(-0.5 * std::pow((x(i, 0) - mu[c]) / sd[c], 2)) / sd[c];
      const double z = r[0] + r[1];
      for (int c = 0; c < 2; ++c) {
        sr[c] += r[c] / z;
        sx[c] += r[c] / z * x(i, 0);
        sxx[c] += r[c] / z * x(i, 0) * x(i, 0);
      }
    }
    for (int c = 0; c < 2; ++c) {
      pi[c] = sr[c] / 400.0;
      mu[c] = sx[c] / sr[c];
      sd[c] = std::sqrt(sxx[c] / sr[c] - mu[c] * mu[c]);
    }
  }
  ASSERT_LT(mu[0], -3.5);
  ASSERT_GT(mu[1], 3.5);

  SpnConfig cfg;
  cfg.groups = 1;
  cfg.components = 2;
  cfg.train.epochs = 30;
  cfg.train.lr = 1e-2;
  const SpnModel m = train_spn(x, cfg);
  const Matrix r = spn_responsibilities(m, 0, x);
  Eigen::Index left = 0;
  r.row(0).maxCoeff(&left);
  for (int i = 0; i < 400; ++i) {
    const Eigen::Index owner = i < 200 ? left : 1 - left;
    ASSERT_GT(r(i, owner), 0.9) << i;
  }
  const double mean_left = m.input.apply(Matrix::Constant(1, 1, mu[0]))(0, 0);
  EXPECT_NEAR(m.groups[0].means(left, 0), mean_left, 0.1);
}

TEST(Spn, StandardNormalLeafAtZero) {
  SpnModel m;
  m.dim = 1;
  m.sigma_floor = 0.0;
  SpnGroup g;
  g.features = {0};
  g.means = Matrix::Zero(1, 1);
  g.log_scales = Matrix::Zero(1, 1);
  g.weight_logits = Vector::Zero(1);
  m.groups = {g};
  EXPECT_NEAR(spn_loglik(m, Matrix::Zero(1, 1)), -0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(Spn, DegenerateMixtureEqualsFirstComponent) {
  SpnModel m;
  m.dim = 2;
  m.sigma_floor = 0.0;
  SpnGroup g;
  g.features = {0, 1};
  g.means = random_matrix(2, 2, 27);
  g.log_scales = random_matrix(2, 2, 28, 0.3);
  g.weight_logits = Vector(2);
  g.weight_logits << 0.0, -std::numeric_limits<double>::infinity();
  m.groups = {g};
  const Matrix x = random_matrix(5, 2, 29);
  const Vector ll = spn_row_loglik(m, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double expect = 0.0;
    for (int f = 0; f < 2; ++f) {
      const double s = std::exp(g.log_scales(0, f));
      expect += -0.5 * std::pow((x(i, f) - g.means(0, f)) / s, 2) - std::log(s) - 0.5 * std::log(2 * std::numbers::pi);
    }
    EXPECT_NEAR(ll(i), expect, 1e-12);
  }
}

TEST(Spn, LogDomainMatchesProbabilityDomain) {
  const Matrix train = random_matrix(200, 5, 30);
  SpnConfig cfg;
  cfg.groups = 2;
  cfg.components = 3;
  cfg.train.epochs = 3;
  const SpnModel m = train_spn(train, cfg);
  const Matrix x = random_matrix(20, 5, 31);
  const Vector ll = spn_row_loglik(m, x);
  const Matrix xs = m.input.apply(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double prob = 1.0;
    for (const auto& g : m.groups) {
      const Vector w = mixture_weights(g);
      double mix = 0.0;
      for (Eigen::Index c = 0; c < g.means.rows(); ++c) {
        double prod = 1.0;
        for (std::size_t k = 0; k < g.features.size(); ++k) {
          const double s = sigma_of(g.log_scales(c, static_cast<Eigen::Index>(k)), m.sigma_floor);
          const double z = (xs(i, g.features[k]) - g.means(c, static_cast<Eigen::Index>(k))) / s;
          prod *= std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * std::numbers::pi));
        }
        mix += w(c) * prod;
      }
      prob *= mix;
    }
    EXPECT_NEAR(ll(i), std::log(prob), 1e-9);
  }
}

TEST(Spn, DimensionMismatch) {
  SpnConfig cfg;
  const SpnModel m = train_spn(random_matrix(50, 3, 32), cfg);
  EXPECT_THROW(spn_loglik(m, random_matrix(2, 4, 33)), DimensionError);
  EXPECT_THROW(train_spn(Matrix(0, 3), cfg), Error);
}

// ---- K-FAC -------------------------------------------------------------------------------

TEST(Kfac, WhitenedInputsGiveIdentityA) {
  Matrix x = random_matrix(200, 3, 34);
  x.rowwise() -= x.colwise().mean();
  const Matrix cov = x.transpose() * x / 200.0;
  const Matrix l_inv = Eigen::LLT<Matrix>(cov).matrixL().solve(Matrix::Identity(3, 3));
  x = x * l_inv.transpose();
  MlpParams net = tiny_classifier(3, 2, {}, Activation::Identity, 35);
  const KfacState k = compute_kfac(net, x, random_labels(200, 2, 36));
  ASSERT_EQ(k.layers.size(), 1u);
  EXPECT_LE((k.layers[0].A - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Kfac, DampingBoundsTheSpectrum) {
  const Matrix x = random_matrix(10, 2, 37);
  MlpParams net = tiny_classifier(2, 2, {}, Activation::Identity, 38);
  const KfacState k = compute_kfac(net, x, random_labels(10, 2, 39), 1e-3);
  const Matrix damped = k.layers[0].A + 1e-3 * Matrix::Identity(3, 3);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(damped).eigenvalues().minCoeff(), 1e-3 - 1e-15);
  EXPECT_LE((k.layers[0].A_inv * damped - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

Matrix explicit_fisher(const MlpParams& net, const Matrix& x, const Labels& y) {
  const LayerStatistics s = layer_statistics(net, x, y);
  const Eigen::Index d = s.inputs[0].cols() * s.pre_grads[0].cols();
  Matrix fisher = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Matrix gi = s.pre_grads[0].row(i).transpose() * s.inputs[0].row(i);
    const Vector v = vec(gi);
    fisher += v * v.transpose() / static_cast<double>(x.rows());
  }
  return fisher;
}

// With near-uniform predictions on balanced classes the backpropagated
// gradients are nearly independent of the activations, the regime K-FAC assumes.
TEST(Kfac, TopEigenvectorMatchesExplicitFisher) {
  const Labels y{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // Anisotropic inputs keep the top eigenvalue separated, so its direction is well defined.
    Matrix x = random_matrix(10, 2, 100 + seed);
    x.col(0) *= 3.0;
    MlpParams net = tiny_classifier(2, 2, {}, Activation::Identity, 300 + seed);
    net.layers[0].weights *= 0.03;
    net.layers[0].bias.setZero();
    const KfacState k = compute_kfac(net, x, y);
    Eigen::SelfAdjointEigenSolver<Matrix> ef(explicit_fisher(net, x, y)), ea(kron(k.layers[0].A, k.layers[0].G));
    EXPECT_GE(std::abs(ef.eigenvectors().col(5).dot(ea.eigenvectors().col(5))), 0.9) << "seed " << seed;
  }
}

TEST(Kfac, UniformPredictionsMakeKroneckerExact) {
  const Matrix x = random_matrix(10, 2, 41);
  const Labels y = random_labels(10, 2, 42);
  MlpParams net = tiny_classifier(2, 2, {}, Activation::Identity, 43);
  net.layers[0].weights.setZero();
  net.layers[0].bias.setZero();
  const KfacState k = compute_kfac(net, x, y);
  EXPECT_LE((explicit_fisher(net, x, y) - kron(k.layers[0].A, k.layers[0].G)).norm(), 1e-12);
}

TEST(Kfac, NaturalGradientMatchesDenseKroneckerOracle) {
  const Matrix x = random_matrix(10, 2, 43);
  const Labels y = random_labels(10, 2, 44);
  MlpParams net = tiny_classifier(2, 2, {}, Activation::Identity, 45);
  const double lambda = 1e-3;
  const KfacState k = compute_kfac(net, x, y, lambda);
  const Matrix grad = layer_gradients(net, x, y)[0];
  const Matrix a = k.layers[0].A + lambda * Matrix::Identity(3, 3);
  const Matrix g = k.layers[0].G + lambda * Matrix::Identity(2, 2);
  const Vector nat = kron(a, g).fullPivLu().solve(vec(grad));
  const double oracle = nat.squaredNorm() / static_cast<double>(net.parameter_count());
  EXPECT_NEAR(natural_gradient_sq_norm(net, k, x, y), oracle, 1e-8);
  EXPECT_NEAR(natural_gradient_sq_norm(net, k, x, y) / oracle, 1.0, 1e-8);
}

TEST(Kfac, LayerGradientsMatchCrossEntropyGradient) {
  const Matrix x = random_matrix(12, 3, 46);
  const Labels y = random_labels(12, 3, 47);
  MlpParams net = tiny_classifier(3, 3, {4}, Activation::Tanh, 48);
  Vector flat;
  cross_entropy(net, x, y, &flat);
  const auto per_layer = layer_gradients(net, x, y);
  Eigen::Index o = 0;
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    const auto& m = per_layer[l];
    const Matrix w = m.leftCols(m.cols() - 1);
    const Vector b = m.col(m.cols() - 1);
    EXPECT_LE((vec(w) - flat.segment(o, w.size())).cwiseAbs().maxCoeff(), 1e-12);
    o += w.size();
    EXPECT_LE((b - flat.segment(o, b.size())).cwiseAbs().maxCoeff(), 1e-12);
    o += b.size();
  }
}

TEST(Kfac, StationaryPointGivesZero) {
  const Matrix x = Matrix::Zero(4, 2);
  const Labels y{0, 1, 0, 1};
  MlpParams net = tiny_classifier(2, 2, {}, Activation::Identity, 49);
  net.layers[0].weights.setZero();
  net.layers[0].bias.setZero();
  const KfacState k = compute_kfac(net, x, y);
  EXPECT_EQ(natural_gradient_sq_norm(net, k, x, y), 0.0);
}

TEST(Kfac, IdentityFactorsReduceToPlainGradient) {
  const Matrix x = random_matrix(6, 2, 50);
  const Labels y = random_labels(6, 2, 51);
  MlpParams net = tiny_classifier(2, 2, {}, Activation::Identity, 52);
  const double lambda = 1e-12;
  const KfacState k = kfac_from_factors({{Matrix::Identity(3, 3), Matrix::Identity(2, 2)}}, lambda, net.parameter_count());
  const Matrix g = layer_gradients(net, x, y)[0];
  const double scale = std::pow(1.0 + lambda, 4);
  EXPECT_NEAR(natural_gradient_sq_norm(net, k, x, y), g.squaredNorm() / scale / static_cast<double>(net.parameter_count()), 1e-15);
  EXPECT_THROW(natural_gradient_sq_norm(net, k, x, {}), Error);
  EXPECT_THROW(natural_gradient_sq_norm(net, k, random_matrix(6, 3, 53), y), DimensionError);
}

// ---- serialization ---------------------------------------------------------------------

TEST(Serialize, ModelsRoundTrip) {
  const Matrix x = random_matrix(60, 3, 54);
  const Labels y = random_labels(60, 2, 55);
  ClassifierConfig cc;
  cc.train.epochs = 2;
  const MlpParams clf = train_classifier(x, y, 2, cc);
  EXPECT_EQ(pack(mlp_from_json(to_json(clf))), pack(clf));
  AutoencoderConfig ac;
  ac.train.epochs = 2;
  const auto ae = train_autoencoder(x, ac);
  const auto ae2 = autoencoder_from_json(to_json(ae));
  EXPECT_EQ(reconstruction_mse(ae2, x), reconstruction_mse(ae, x));
  SpnConfig sc;
  sc.train.epochs = 2;
  const auto spn = train_spn(x, sc);
  EXPECT_EQ(spn_loglik(spn_from_json(to_json(spn)), x), spn_loglik(spn, x));
  const auto k = compute_kfac(clf, x, y);
  EXPECT_EQ(natural_gradient_sq_norm(clf, kfac_from_json(to_json(k)), x, y), natural_gradient_sq_norm(clf, k, x, y));
}
