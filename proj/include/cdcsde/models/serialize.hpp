#pragma once

// JSON snapshots of trained models. Doubles are written with round-trip
// precision, so load(save(m)) reproduces every parameter bit for bit.

#include "cdcsde/models/autoencoder.hpp"
#include "cdcsde/models/kfac.hpp"
#include "cdcsde/models/spn.hpp"

#include "json.hpp"

namespace cdcsde::models {

using json = nlohmann::json;

inline constexpr int kSnapshotVersion = 1;

inline json matrix_to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0, k = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c, ++k) data[static_cast<std::size_t>(k)] = m(r, c);
  j["data"] = std::move(data);
  return j;
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("snapshot: matrix payload size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0, k = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c, ++k) m(r, c) = data[static_cast<std::size_t>(k)];
  return m;
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j) {
  const auto d = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
}

inline void put_standardizer(json& j, const Standardizer& s) {
  if (s.empty()) return;
  j["input_mean"] = vector_to_json(s.mean.transpose());
  j["input_inv_scale"] = vector_to_json(s.inv_scale.transpose());
}

inline Standardizer get_standardizer(const json& j) {
  Standardizer s;
  if (j.contains("input_mean")) {
    s.mean = vector_from_json(j.at("input_mean")).transpose();
    s.inv_scale = vector_from_json(j.at("input_inv_scale")).transpose();
  }
  return s;
}

inline json to_json(const MlpParams& net) {
  json j;
  j["head"] = net.head == Head::Softmax ? "softmax" : "identity";
  j["theta_star"] = net.theta_star;
  put_standardizer(j, net.input);
  j["layers"] = json::array();
  for (const auto& l : net.layers)
    j["layers"].push_back({{"weights", matrix_to_json(l.weights)}, {"bias", vector_to_json(l.bias)}, {"activation", to_string(l.activation)}});
  return j;
}

inline MlpParams mlp_from_json(const json& j) {
  MlpParams net;
  net.head = j.at("head").get<std::string>() == "softmax" ? Head::Softmax : Head::Identity;
  net.theta_star = j.at("theta_star").get<bool>();
  net.input = get_standardizer(j);
  for (const auto& l : j.at("layers"))
    net.layers.push_back(DenseLayer{matrix_from_json(l.at("weights")), vector_from_json(l.at("bias")),
                                    activation_from_string(l.at("activation").get<std::string>())});
  net.validate();
  return net;
}

inline json to_json(const AutoencoderModel& ae) {
  return {{"encoder", to_json(ae.encoder)}, {"decoder", to_json(ae.decoder)}, {"training_loss", ae.training_loss}};
}

inline AutoencoderModel autoencoder_from_json(const json& j) {
  AutoencoderModel ae;
  ae.encoder = mlp_from_json(j.at("encoder"));
  ae.decoder = mlp_from_json(j.at("decoder"));
  ae.training_loss = j.at("training_loss").get<double>();
  return ae;
}

inline json to_json(const SpnModel& m) {
  json j;
  j["structure"] = SpnModel::structure;
  j["sigma_floor"] = m.sigma_floor;
  j["dim"] = m.dim;
  put_standardizer(j, m.input);
  j["groups"] = json::array();
  for (const auto& g : m.groups)
    j["groups"].push_back({{"features", g.features},
                           {"means", matrix_to_json(g.means)},
                           {"log_scales", matrix_to_json(g.log_scales)},
                           {"weight_logits", vector_to_json(g.weight_logits)}});
  return j;
}

inline SpnModel spn_from_json(const json& j) {
  SpnModel m;
  m.sigma_floor = j.at("sigma_floor").get<double>();
  m.dim = j.at("dim").get<Eigen::Index>();
  m.input = get_standardizer(j);
  for (const auto& g : j.at("groups"))
    m.groups.push_back(SpnGroup{g.at("features").get<std::vector<int>>(), matrix_from_json(g.at("means")),
                                matrix_from_json(g.at("log_scales")), vector_from_json(g.at("weight_logits"))});
  return m;
}

inline json to_json(const KfacState& k) {
  json j;
  j["damping"] = k.damping;
  j["u"] = k.u;
  j["layers"] = json::array();
  for (const auto& l : k.layers) j["layers"].push_back({{"A", matrix_to_json(l.A)}, {"G", matrix_to_json(l.G)}});
  return j;
}

inline KfacState kfac_from_json(const json& j) {
  std::vector<std::pair<Matrix, Matrix>> factors;
  for (const auto& l : j.at("layers")) factors.emplace_back(matrix_from_json(l.at("A")), matrix_from_json(l.at("G")));
  return kfac_from_factors(std::move(factors), j.at("damping").get<double>(), j.at("u").get<long>());
}

}  // namespace cdcsde::models
