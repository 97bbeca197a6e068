// Copyright 2026 The dpvd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPVD_NETWORK_H_
#define DPVD_NETWORK_H_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpvd/matrix.hpp"
#include "dpvd/rng.hpp"

namespace dpvd {

// One affine layer under a Gaussian weight posterior N(phi, zeta^2) per
// coordinate. zeta holds per-weight noise stds (>= 0); the bias is
// deterministic.
struct VariationalLayer {
  Matrix phi;   // in x out weight means
  Matrix zeta;  // in x out noise stds
  Matrix bias;  // 1 x out

  std::size_t in_dim() const { return phi.rows(); }
  std::size_t out_dim() const { return phi.cols(); }

  void validate() const {
    if (!zeta.same_shape(phi)) {
      throw std::invalid_argument("VariationalLayer: zeta shape differs from phi");
    }
    if (bias.rows() != 1 || bias.cols() != phi.cols()) {
      throw std::invalid_argument("VariationalLayer: bias must be 1 x out");
    }
    for (double z : zeta.data()) {
      if (!(z >= 0.0)) {
        throw std::invalid_argument("VariationalLayer: zeta entries must be >= 0");
      }
    }
  }
};

// Feed-forward classifier: affine layers with ReLU between them and softmax
// over the last layer's outputs.
struct Network {
  std::vector<VariationalLayer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }

  void validate() const {
    if (layers.empty()) {
      throw std::invalid_argument("Network: no layers");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].validate();
      if (l + 1 < layers.size() &&
          layers[l].out_dim() != layers[l + 1].in_dim()) {
        throw std::invalid_argument("Network: layer " + std::to_string(l) +
                                    " output does not feed layer " +
                                    std::to_string(l + 1));
      }
    }
  }
};

// dims = {input, hidden..., classes}. phi ~ N(0, 2/fan_in), bias 0, and zeta
// set so that zeta^2/phi^2 == init_alpha everywhere (zeta = sqrt(alpha)|phi|).
inline Network make_network(const std::vector<std::size_t>& dims, Rng& rng,
                            double init_alpha = 0.01) {
  if (dims.size() < 2) {
    throw std::invalid_argument("make_network: need at least input and output dims");
  }
  if (!(init_alpha >= 0.0)) {
    throw std::invalid_argument("make_network: init_alpha must be >= 0");
  }
  Network net;
  const double root_alpha = std::sqrt(init_alpha);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    VariationalLayer layer;
    const double std_phi = std::sqrt(2.0 / static_cast<double>(dims[l]));
    layer.phi = gaussian_sample(rng, dims[l], dims[l + 1], 0.0, std_phi);
    layer.zeta = Matrix(dims[l], dims[l + 1]);
    for (std::size_t i = 0; i < layer.phi.size(); ++i) {
      layer.zeta.data()[i] = root_alpha * std::fabs(layer.phi.data()[i]);
    }
    layer.bias = Matrix(1, dims[l + 1]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

namespace detail {

inline void require_input_dim(const VariationalLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw std::invalid_argument("layer expects " +
                                std::to_string(layer.in_dim()) +
                                " inputs, got " + std::to_string(x.cols()));
  }
}

}  // namespace detail

// Pre-activation with mean weights: x*phi + bias.
inline Matrix layer_forward_deterministic(const VariationalLayer& layer,
                                          const Matrix& x) {
  detail::require_input_dim(layer, x);
  return add_row_broadcast(matmul(x, layer.phi), layer.bias);
}

// Pre-activation with one sampled weight matrix theta = phi + zeta*eps shared
// by the whole batch (weight-space noise).
inline Matrix layer_forward_sampled(const VariationalLayer& layer,
                                    const Matrix& x, Rng& rng) {
  detail::require_input_dim(layer, x);
  Matrix theta = layer.phi;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double z = layer.zeta.data()[i];
    if (z != 0.0) theta.data()[i] += z * rng.next_gaussian();
  }
  return add_row_broadcast(matmul(x, theta), layer.bias);
}

// Pre-activation with activation-space noise: m + sqrt(s) * eps per cell,
// m = x*phi + bias, s = (x*x)*(zeta*zeta). Each batch row gets fresh noise;
// marginals match layer_forward_sampled per cell.
inline Matrix layer_forward_lrt(const VariationalLayer& layer, const Matrix& x,
                                Rng& rng) {
  detail::require_input_dim(layer, x);
  Matrix m = add_row_broadcast(matmul(x, layer.phi), layer.bias);
  const Matrix s = matmul(hadamard(x, x), hadamard(layer.zeta, layer.zeta));
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double si = s.data()[i];
    if (si > 0.0) m.data()[i] += std::sqrt(si) * rng.next_gaussian();
  }
  return m;
}

namespace detail {

template <typename LayerForward>
Matrix forward_impl(const Network& net, const Matrix& x, LayerForward&& f) {
  Matrix h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix pre = f(net.layers[l], h);
    h = (l + 1 < net.layers.size()) ? relu(pre) : std::move(pre);
  }
  return log_softmax_rows(h);
}

}  // namespace detail

// Class log-probabilities with mean weights.
inline Matrix forward_deterministic(const Network& net, const Matrix& x) {
  return detail::forward_impl(net, x, [](const VariationalLayer& l, const Matrix& h) {
    return layer_forward_deterministic(l, h);
  });
}

// Class log-probabilities with weight-space noise, fresh per call.
inline Matrix forward_sampled(const Network& net, const Matrix& x, Rng& rng) {
  return detail::forward_impl(net, x, [&rng](const VariationalLayer& l, const Matrix& h) {
    return layer_forward_sampled(l, h, rng);
  });
}

// Class log-probabilities with activation-space noise, fresh per call.
inline Matrix forward_lrt(const Network& net, const Matrix& x, Rng& rng) {
  return detail::forward_impl(net, x, [&rng](const VariationalLayer& l, const Matrix& h) {
    return layer_forward_lrt(l, h, rng);
  });
}

// Argmax class of the deterministic forward pass; ties take the lowest index.
inline std::vector<int> predict(const Network& net, const Matrix& x) {
  const Matrix logp = forward_deterministic(net, x);
  std::vector<int> out(logp.rows());
  for (std::size_t i = 0; i < logp.rows(); ++i) {
    int best = 0;
    for (std::size_t j = 1; j < logp.cols(); ++j) {
      if (logp(i, j) > logp(i, best)) best = static_cast<int>(j);
    }
    out[i] = best;
  }
  return out;
}

// Versioned binary checkpoint; reload is bit-exact (raw little-endian
// doubles).
inline void save_checkpoint(const Network& net,
                            const std::filesystem::path& path) {
  net.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const char magic[8] = {'D', 'P', 'V', 'D', 'N', 'E', 'T', '1'};
  out.write(magic, 8);
  const auto write_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  const auto write_matrix = [&out](const Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data().data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  };
  write_u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const VariationalLayer& layer : net.layers) {
    write_u32(static_cast<std::uint32_t>(layer.in_dim()));
    write_u32(static_cast<std::uint32_t>(layer.out_dim()));
    write_matrix(layer.phi);
    write_matrix(layer.zeta);
    write_matrix(layer.bias);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, "DPVDNET1", 8) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path.string());
  }
  const auto read_u32 = [&in, &path]() {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) {
      throw std::runtime_error("truncated checkpoint " + path.string());
    }
    return v;
  };
  const auto read_matrix = [&in, &path](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data().data()),
                 static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw std::runtime_error("truncated checkpoint " + path.string());
    }
    return m;
  };
  Network net;
  const std::uint32_t n_layers = read_u32();
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    VariationalLayer layer;
    const std::uint32_t in_dim = read_u32();
    const std::uint32_t out_dim = read_u32();
    layer.phi = read_matrix(in_dim, out_dim);
    layer.zeta = read_matrix(in_dim, out_dim);
    layer.bias = read_matrix(1, out_dim);
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

}  // namespace dpvd

#endif  // DPVD_NETWORK_H_
