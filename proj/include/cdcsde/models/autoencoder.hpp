#pragma once

#include "cdcsde/models/mlp.hpp"

namespace cdcsde::models {

struct AutoencoderConfig {
  int bottleneck = 6;
  Activation activation = Activation::Relu;
  bool standardize = true;
  TrainConfig train;
};

// Encoder owns the input standardization; reconstruction error is measured
// in the standardized coordinates.
struct AutoencoderModel {
  MlpParams encoder;
  MlpParams decoder;
  double training_loss = 0.0;  // L_tr

  Eigen::Index input_dim() const { return encoder.input_dim(); }
  Eigen::Index embedding_dim() const { return encoder.output_dim(); }
};

inline Matrix encode(const AutoencoderModel& ae, const Matrix& x) { return forward(ae.encoder, x).output; }

inline Matrix reconstruct(const AutoencoderModel& ae, const Matrix& x) {
  return forward(ae.decoder, encode(ae, x)).output;
}

inline double reconstruction_mse(const AutoencoderModel& ae, const Matrix& x) {
  if (x.cols() != ae.input_dim())
    throw DimensionError("reconstruction_mse: input has " + std::to_string(x.cols()) + " features, autoencoder expects " +
                         std::to_string(ae.input_dim()));
  if (x.rows() == 0) throw Error("reconstruction_mse: empty input");
  const Matrix target = ae.encoder.input.apply(x);
  return (reconstruct(ae, x) - target).squaredNorm() / static_cast<double>(x.size());
}

namespace detail {

// Encoder and decoder as one network for training.
inline MlpParams joined(const AutoencoderModel& ae) {
  MlpParams net = ae.encoder;
  net.head = Head::Identity;
  for (const auto& l : ae.decoder.layers) net.layers.push_back(l);
  return net;
}

inline void split(const MlpParams& net, std::size_t encoder_layers, AutoencoderModel& ae) {
  ae.encoder.layers.assign(net.layers.begin(), net.layers.begin() + static_cast<long>(encoder_layers));
  ae.decoder.layers.assign(net.layers.begin() + static_cast<long>(encoder_layers), net.layers.end());
}

}  // namespace detail

// Mean squared reconstruction error of the joined net and its gradient.
inline double autoencoder_loss(const MlpParams& joined, const Matrix& x, Vector* grad = nullptr) {
  const ForwardCache c = forward(joined, x);
  const Matrix target = joined.input.apply(x);
  const Matrix diff = c.output - target;
  const double denom = static_cast<double>(x.size());
  if (grad) *grad = pack(backward(joined, c, 2.0 * diff / denom).grads);
  return diff.squaredNorm() / denom;
}

inline AutoencoderModel init_autoencoder(Eigen::Index input_dim, const AutoencoderConfig& cfg) {
  std::mt19937_64 rng(cfg.train.seed ^ 0xae5eedULL);
  AutoencoderModel ae;
  ae.encoder.head = Head::Identity;
  ae.decoder.head = Head::Identity;
  ae.encoder.layers.push_back(init_layer(input_dim, cfg.bottleneck, cfg.activation, rng));
  ae.decoder.layers.push_back(init_layer(cfg.bottleneck, input_dim, Activation::Identity, rng));
  return ae;
}

inline AutoencoderModel train_autoencoder(const Matrix& x, const AutoencoderConfig& cfg) {
  if (x.rows() == 0) throw Error("train_autoencoder: empty input");
  if (!x.allFinite()) throw Error("train_autoencoder: non-finite features");
  AutoencoderModel ae = init_autoencoder(x.cols(), cfg);
  if (cfg.standardize) ae.encoder.input = Standardizer::fit(x);
  MlpParams net = detail::joined(ae);
  Vector theta = pack(net);
  MlpParams work = net;
  adam_minibatch(theta, x.rows(), cfg.train, [&](const Vector& p, const std::vector<int>& idx, Vector& g) {
    unpack(work, p);
    return autoencoder_loss(work, take_rows(x, idx), &g);
  });
  unpack(net, theta);
  detail::split(net, ae.encoder.layers.size(), ae);
  ae.encoder.theta_star = ae.decoder.theta_star = true;
  ae.training_loss = reconstruction_mse(ae, x);
  return ae;
}

}  // namespace cdcsde::models
