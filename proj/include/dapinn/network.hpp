// SPDX-License-Identifier: Apache-2.0
//
// Fully-connected sub-networks mapping (t, x[, y]) to field components.
// Plain evaluation for prediction/export, tape evaluation for training, and
// exact input Jacobians either way.

#ifndef DAPINN_NETWORK_HPP
#define DAPINN_NETWORK_HPP

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dapinn/errors.hpp"
#include "dapinn/rng.hpp"
#include "dapinn/tape.hpp"

namespace dapinn::nn {

using ad::Activation;
using ad::Expr;
using ad::Matrix;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline const char* activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw config_error("unknown activation '" + s + "' (expected tanh|relu)");
}

struct Layer {
  Matrix weights;  // input_dim x output_dim
  RowVector bias;  // 1 x output_dim
};

// Optional per-axis map applied before the first layer: x' = a*x + b.
// Recorded on the tape, so input derivatives pick up the chain factor.
struct InputScaling {
  bool enabled = false;
  Vector slope;
  Vector offset;

  // Maps [lo_i, hi_i] to [-1, 1] per axis.
  static InputScaling for_box(const Vector& lo, const Vector& hi) {
    InputScaling s;
    s.enabled = true;
    s.slope = (2.0 / (hi - lo).array()).matrix();
    s.offset = (-(hi + lo).array() / (hi - lo).array()).matrix();
    return s;
  }
};

struct NetworkParams {
  std::vector<Layer> layers;
  Activation activation = Activation::kTanh;
  InputScaling scaling;

  int input_dim() const { return static_cast<int>(layers.front().weights.rows()); }
  int output_dim() const { return static_cast<int>(layers.back().weights.cols()); }
};

// Weights uniform with fan-in based scale (Glorot-uniform for tanh,
// U(+-sqrt(2/fan_in)) for ReLU), biases zero, deterministic per seed.
inline NetworkParams init_network(const std::vector<int>& sizes, Activation act,
                                  std::uint64_t seed) {
  if (sizes.size() < 3) throw config_error("init_network: need at least one hidden layer");
  for (int s : sizes)
    if (s <= 0) throw config_error("init_network: zero-width layer");
  NetworkParams params;
  params.activation = act;
  Rng rng = Rng::stream(seed, /*tag=*/0x11);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const double bound = act == Activation::kTanh
                             ? std::sqrt(6.0 / (fan_in + fan_out))
                             : std::sqrt(2.0 / fan_in);
    Layer layer;
    layer.weights.resize(fan_in, fan_out);
    for (long j = 0; j < fan_out; ++j)
      for (long i = 0; i < fan_in; ++i) layer.weights(i, j) = rng.uniform(-bound, bound);
    layer.bias = RowVector::Zero(fan_out);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

// Standard MLP composition, linear last layer. Rows of `input` are points.
inline Matrix forward_batch(const NetworkParams& params, const Matrix& input) {
  if (input.cols() != params.input_dim())
    throw shape_error("forward: input dimension mismatch");
  Matrix h = input;
  if (params.scaling.enabled) {
    for (long c = 0; c < h.cols(); ++c)
      h.col(c) = (h.col(c).array() * params.scaling.slope(c) + params.scaling.offset(c));
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    h = (h * params.layers[l].weights).rowwise() + params.layers[l].bias;
    if (l + 1 < params.layers.size()) {
      if (params.activation == Activation::kTanh)
        h = h.array().tanh();
      else
        h = h.array().max(0.0);
    }
  }
  return h;
}

inline Vector forward(const NetworkParams& params, const Vector& input) {
  return forward_batch(params, input.transpose()).row(0);
}

struct ForwardWithJacobian {
  Vector value;    // output_dim
  Matrix jacobian; // output_dim x input_dim, rows are d(out_i)/d(input)
};

// Value plus exact input Jacobian via layer-wise tangent propagation:
// J <- (J * W) .* act'(z). The value channel repeats forward() exactly.
inline ForwardWithJacobian forward_with_derivatives(const NetworkParams& params,
                                                    const Vector& input) {
  if (input.size() != params.input_dim())
    throw shape_error("forward_with_derivatives: input dimension mismatch");
  const int din = params.input_dim();
  Matrix h = input.transpose();
  // j(a, k) = d h_k / d input_a, starting from the identity on the inputs.
  Matrix j = Matrix::Identity(din, din);
  if (params.scaling.enabled) {
    for (long c = 0; c < h.cols(); ++c) {
      h.col(c) = (h.col(c).array() * params.scaling.slope(c) + params.scaling.offset(c));
      j.col(c) *= params.scaling.slope(c);
    }
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    h = (h * params.layers[l].weights).rowwise() + params.layers[l].bias;
    j = j * params.layers[l].weights;
    if (l + 1 < params.layers.size()) {
      Eigen::ArrayXXd dact;
      if (params.activation == Activation::kTanh) {
        h = h.array().tanh();
        dact = 1.0 - h.array().square();
      } else {
        dact = (h.array() > 0.0).cast<double>();
        h = h.array().max(0.0);
      }
      j = j.array().rowwise() * dact.row(0);
    }
  }
  ForwardWithJacobian out;
  out.value = h.row(0);
  out.jacobian = j.transpose();
  return out;
}

// --- tape evaluation -----------------------------------------------------------

// Leaf handles of one network registered on a tape ("<prefix>/L<i>/W|b").
struct TapeNet {
  std::vector<std::pair<Expr, Expr>> layer_params;
  Activation activation = Activation::kTanh;
  InputScaling scaling;
  std::string prefix;

  static TapeNet register_on(ad::Tape& tape, const NetworkParams& params,
                             const std::string& prefix) {
    TapeNet net;
    net.activation = params.activation;
    net.scaling = params.scaling;
    net.prefix = prefix;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      Expr w = tape.leaf(prefix + "/L" + std::to_string(l) + "/W", params.layers[l].weights);
      Expr b = tape.leaf(prefix + "/L" + std::to_string(l) + "/b",
                         Matrix(params.layers[l].bias));
      net.layer_params.emplace_back(w, b);
    }
    return net;
  }

  // Pushes the current parameter values into the tape leaves.
  void set_params(ad::Tape& tape, const NetworkParams& params) const {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      tape.set_input(layer_params[l].first, params.layers[l].weights);
      tape.set_input(layer_params[l].second, Matrix(params.layers[l].bias));
    }
  }

  std::vector<std::string> leaf_names() const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < layer_params.size(); ++l) {
      names.push_back(prefix + "/L" + std::to_string(l) + "/W");
      names.push_back(prefix + "/L" + std::to_string(l) + "/b");
    }
    return names;
  }

  // Batched forward from per-axis coordinate columns. The columns stay
  // distinct tape nodes, so callers can seed tangents per coordinate.
  Expr forward_cols(ad::Tape& tape, const std::vector<Expr>& coord_cols) const {
    std::vector<Expr> cols = coord_cols;
    if (scaling.enabled) {
      for (std::size_t c = 0; c < cols.size(); ++c)
        cols[c] = tape.affine(cols[c], scaling.slope(c), scaling.offset(c));
    }
    Expr h = tape.hcat(cols);
    for (std::size_t l = 0; l < layer_params.size(); ++l) {
      h = tape.add_rowvec(tape.matmul(h, layer_params[l].first), layer_params[l].second);
      if (l + 1 < layer_params.size()) h = tape.activation(h, activation);
    }
    return h;
  }
};

// --- serialization ---------------------------------------------------------------

inline constexpr int kNetworkFormatVersion = 1;

inline nlohmann::json to_json(const NetworkParams& params) {
  nlohmann::json j;
  j["format_version"] = kNetworkFormatVersion;
  j["activation"] = activation_name(params.activation);
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : params.layers) {
    nlohmann::json jl;
    jl["shape"] = {l.weights.rows(), l.weights.cols()};
    std::vector<double> w;
    w.reserve(l.weights.size());
    for (long r = 0; r < l.weights.rows(); ++r)
      for (long c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
    jl["weights_row_major"] = std::move(w);
    jl["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  if (params.scaling.enabled) {
    j["input_scaling"] = {
        {"slope", std::vector<double>(params.scaling.slope.data(),
                                      params.scaling.slope.data() + params.scaling.slope.size())},
        {"offset", std::vector<double>(params.scaling.offset.data(),
                                       params.scaling.offset.data() + params.scaling.offset.size())}};
  }
  return j;
}

inline NetworkParams network_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kNetworkFormatVersion)
    throw config_error("network checkpoint: unsupported or missing format_version");
  NetworkParams params;
  params.activation = activation_from_name(j.at("activation").get<std::string>());
  for (const auto& jl : j.at("layers")) {
    Layer l;
    const long rows = jl.at("shape")[0].get<long>();
    const long cols = jl.at("shape")[1].get<long>();
    const auto w = jl.at("weights_row_major").get<std::vector<double>>();
    if (static_cast<long>(w.size()) != rows * cols)
      throw config_error("network checkpoint: weight count disagrees with shape");
    l.weights.resize(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c) l.weights(r, c) = w[r * cols + c];
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (static_cast<long>(b.size()) != cols)
      throw config_error("network checkpoint: bias length disagrees with shape");
    l.bias = Eigen::Map<const RowVector>(b.data(), cols);
    params.layers.push_back(std::move(l));
  }
  if (j.contains("input_scaling")) {
    const auto s = j.at("input_scaling").at("slope").get<std::vector<double>>();
    const auto o = j.at("input_scaling").at("offset").get<std::vector<double>>();
    params.scaling.enabled = true;
    params.scaling.slope = Eigen::Map<const Vector>(s.data(), s.size());
    params.scaling.offset = Eigen::Map<const Vector>(o.data(), o.size());
  }
  return params;
}

}  // namespace dapinn::nn

#endif  // DAPINN_NETWORK_HPP
