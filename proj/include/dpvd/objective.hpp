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

#ifndef DPVD_OBJECTIVE_H_
#define DPVD_OBJECTIVE_H_

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dpvd/dataset.hpp"
#include "dpvd/matrix.hpp"
#include "dpvd/network.hpp"
#include "dpvd/rng.hpp"

namespace dpvd {

// Constants of the full-range smooth approximation to the per-weight KL
// against the log-uniform prior, as a function of alpha = zeta^2/phi^2:
//   kl(alpha) = k1 - k1*sigmoid(k2 + k3*ln alpha) + 0.5*ln(1 + 1/alpha).
inline constexpr double kKl1 = 0.63576;
inline constexpr double kKl2 = 1.87320;
inline constexpr double kKl3 = 1.48695;

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// Per-weight KL at noise-to-mean ratio alpha. alpha == +inf gives the limit 0;
// alpha == 0 diverges to +inf.
inline double kl_alpha(double alpha) {
  if (!(alpha >= 0.0)) {
    throw std::invalid_argument("kl_alpha: alpha must be >= 0");
  }
  if (std::isinf(alpha)) return 0.0;
  if (alpha == 0.0) return std::numeric_limits<double>::infinity();
  return kKl1 - kKl1 * sigmoid(kKl2 + kKl3 * std::log(alpha)) +
         0.5 * std::log1p(1.0 / alpha);
}

// d kl / d alpha; 0 in the degenerate slices (alpha 0 or inf).
inline double kl_alpha_derivative(double alpha) {
  if (!(alpha > 0.0) || std::isinf(alpha)) return 0.0;
  const double s = sigmoid(kKl2 + kKl3 * std::log(alpha));
  return -kKl1 * s * (1.0 - s) * kKl3 / alpha - 0.5 / (alpha * (alpha + 1.0));
}

// KL of one weight. phi == 0 contributes the alpha -> inf limit, 0.
inline double kl_entry(double phi, double zeta) {
  if (phi == 0.0) return 0.0;
  const double ratio = zeta / phi;
  return kl_alpha(ratio * ratio);
}

// d kl / d phi and d kl / d zeta for one weight. Both are 0 in the phi == 0
// and zeta == 0 slices (the KL is treated as constant there).
inline std::pair<double, double> kl_entry_grad(double phi, double zeta) {
  if (phi == 0.0 || zeta == 0.0) return {0.0, 0.0};
  const double alpha = (zeta / phi) * (zeta / phi);
  if (!std::isfinite(alpha)) return {0.0, 0.0};
  const double g = kl_alpha_derivative(alpha);
  return {g * (-2.0 * alpha / phi), g * (2.0 * zeta / (phi * phi))};
}

inline double kl_term(const Matrix& zeta, const Matrix& phi) {
  detail::require_same_shape(zeta, phi, "kl_term");
  double total = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    total += kl_entry(phi.data()[i], zeta.data()[i]);
  }
  return total;
}

inline double kl_term(const Network& net) {
  double total = 0.0;
  for (const VariationalLayer& layer : net.layers) {
    total += kl_term(layer.zeta, layer.phi);
  }
  return total;
}

// Minibatch objective value. `kl` is the KL share actually included in the
// objective (the full KL term at weight 1, 0 at weight 0), so the identity
// elbo == expected_loglik - kl holds exactly for what is optimized.
struct ElboEstimate {
  double expected_loglik = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
};

// Fresh activation-space noise for one pass: one rows x out matrix per layer.
struct LrtNoise {
  std::vector<Matrix> eps;
};

inline LrtNoise draw_lrt_noise(const Network& net, std::size_t rows,
                               Rng& rng) {
  LrtNoise noise;
  noise.eps.reserve(net.layers.size());
  for (const VariationalLayer& layer : net.layers) {
    noise.eps.push_back(gaussian_sample(rng, rows, layer.out_dim(), 0.0, 1.0));
  }
  return noise;
}

struct LayerGrad {
  Matrix dphi;
  Matrix dzeta;
  Matrix dbias;
};

struct ObjectiveOptions {
  double kl_weight = 1.0;
  // Per-layer per-example L2 bound on the gradient over the updated blocks
  // (phi, bias, and zeta when zeta_grad). Unset means no clipping.
  std::optional<double> clip_per_layer;
  bool zeta_grad = true;
};

// Gradients of the negative minibatch objective, summed over the batch after
// optional per-example per-layer clipping. With no clipping the sum is the
// exact gradient of -(elbo estimate).
struct ObjectiveResult {
  ElboEstimate elbo;
  std::vector<LayerGrad> grad_sum;
};

namespace detail {

struct ForwardTrace {
  std::vector<Matrix> h;    // input of each layer
  std::vector<Matrix> hsq;  // h*h per layer
  std::vector<Matrix> zsq;  // zeta*zeta per layer
  std::vector<Matrix> sd;   // sqrt((h*h)*(zeta*zeta)) per layer
  std::vector<Matrix> pre;  // sd-noised pre-activations per layer
  Matrix logp;              // batch log-probabilities
};

inline void check_batch(const Network& net, const Batch& batch,
                        std::size_t n_total) {
  if (batch.size() == 0) {
    throw std::invalid_argument("objective: empty batch");
  }
  if (batch.features.rows() != batch.size()) {
    throw std::invalid_argument("objective: feature/label row mismatch");
  }
  if (n_total < batch.size()) {
    throw std::invalid_argument("objective: n_total smaller than batch");
  }
  if (batch.features.cols() != net.input_dim()) {
    throw std::invalid_argument("objective: feature width != input dim");
  }
  const int classes = static_cast<int>(net.output_dim());
  for (int y : batch.labels) {
    if (y < 0 || y >= classes) {
      throw std::invalid_argument("objective: label out of range");
    }
  }
}

inline ForwardTrace forward_trace(const Network& net, const Matrix& x,
                                  const LrtNoise& noise) {
  const std::size_t layer_count = net.layers.size();
  if (noise.eps.size() != layer_count) {
    throw std::invalid_argument("objective: noise layer count mismatch");
  }
  ForwardTrace t;
  t.h.resize(layer_count);
  t.hsq.resize(layer_count);
  t.zsq.resize(layer_count);
  t.sd.resize(layer_count);
  t.pre.resize(layer_count);
  t.h[0] = x;
  for (std::size_t l = 0; l < layer_count; ++l) {
    const VariationalLayer& layer = net.layers[l];
    if (noise.eps[l].rows() != x.rows() ||
        noise.eps[l].cols() != layer.out_dim()) {
      throw std::invalid_argument("objective: noise shape mismatch");
    }
    t.hsq[l] = hadamard(t.h[l], t.h[l]);
    t.zsq[l] = hadamard(layer.zeta, layer.zeta);
    Matrix pre = add_row_broadcast(matmul(t.h[l], layer.phi), layer.bias);
    Matrix sd = matmul(t.hsq[l], t.zsq[l]);
    for (double& v : sd.data()) v = v > 0.0 ? std::sqrt(v) : 0.0;
    const Matrix& eps = noise.eps[l];
    for (std::size_t i = 0; i < pre.size(); ++i) {
      const double s = sd.data()[i];
      if (s > 0.0) pre.data()[i] += s * eps.data()[i];
    }
    t.sd[l] = std::move(sd);
    t.pre[l] = std::move(pre);
    if (l + 1 < layer_count) t.h[l + 1] = relu(t.pre[l]);
  }
  t.logp = log_softmax_rows(t.pre[layer_count - 1]);
  return t;
}

inline ElboEstimate elbo_from_trace(const Network& net, const Batch& batch,
                                    std::size_t n_total,
                                    const ForwardTrace& trace,
                                    double kl_weight) {
  double ll_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ll_sum += trace.logp(i, static_cast<std::size_t>(batch.labels[i]));
  }
  const double scale =
      static_cast<double>(n_total) / static_cast<double>(batch.size());
  ElboEstimate est;
  est.expected_loglik = scale * ll_sum;
  est.kl = kl_weight == 0.0 ? 0.0 : kl_weight * kl_term(net);
  est.elbo = est.expected_loglik - est.kl;
  return est;
}

inline std::vector<double> rowdot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "rowdot");
  std::vector<double> out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * b(i, j);
    out[i] = acc;
  }
  return out;
}

inline Matrix row_scale(const Matrix& a, const std::vector<double>& r) {
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) *= r[i];
  }
  return out;
}

}  // namespace detail

inline ObjectiveResult objective_gradients(const Network& net,
                                           const Batch& batch,
                                           std::size_t n_total,
                                           const LrtNoise& noise,
                                           const ObjectiveOptions& opts) {
  net.validate();
  detail::check_batch(net, batch, n_total);
  if (opts.clip_per_layer && !(*opts.clip_per_layer > 0.0)) {
    throw std::invalid_argument("objective: clip bound must be positive");
  }

  const std::size_t layer_count = net.layers.size();
  const std::size_t s_batch = batch.size();
  const double lik_scale =
      static_cast<double>(n_total) / static_cast<double>(s_batch);

  const detail::ForwardTrace trace =
      detail::forward_trace(net, batch.features, noise);

  ObjectiveResult result;
  result.elbo =
      detail::elbo_from_trace(net, batch, n_total, trace, opts.kl_weight);

  // KL gradients per layer (zero matrices when the KL is skipped).
  std::vector<Matrix> kl_dphi(layer_count), kl_dzeta(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    const VariationalLayer& layer = net.layers[l];
    kl_dphi[l] = Matrix(layer.in_dim(), layer.out_dim());
    kl_dzeta[l] = Matrix(layer.in_dim(), layer.out_dim());
    if (opts.kl_weight != 0.0) {
      for (std::size_t i = 0; i < layer.phi.size(); ++i) {
        const auto [dp, dz] =
            kl_entry_grad(layer.phi.data()[i], layer.zeta.data()[i]);
        kl_dphi[l].data()[i] = dp;
        kl_dzeta[l].data()[i] = dz;
      }
    }
  }

  // Backward sweep: dPre holds the gradient w.r.t. the current layer's
  // pre-activation, carrying the full N/S likelihood weight.
  std::vector<Matrix> d_pre(layer_count), u(layer_count);
  {
    const Matrix& last = trace.logp;
    Matrix d(s_batch, net.output_dim());
    for (std::size_t i = 0; i < s_batch; ++i) {
      const std::size_t y = static_cast<std::size_t>(batch.labels[i]);
      for (std::size_t j = 0; j < d.cols(); ++j) {
        d(i, j) = lik_scale * (std::exp(last(i, j)) - (j == y ? 1.0 : 0.0));
      }
    }
    d_pre[layer_count - 1] = std::move(d);
  }
  for (std::size_t l = layer_count; l-- > 0;) {
    // U = dPre * eps * 0.5/sd on cells with sd > 0: gradient w.r.t. the
    // pre-activation variance s.
    Matrix ul = d_pre[l];
    for (std::size_t i = 0; i < ul.size(); ++i) {
      const double s = trace.sd[l].data()[i];
      ul.data()[i] =
          s > 0.0 ? ul.data()[i] * noise.eps[l].data()[i] * (0.5 / s) : 0.0;
    }
    u[l] = std::move(ul);
    if (l > 0) {
      Matrix dh = matmul(d_pre[l], transpose(net.layers[l].phi));
      const Matrix var_path = matmul(u[l], transpose(trace.zsq[l]));
      for (std::size_t i = 0; i < dh.size(); ++i) {
        dh.data()[i] += 2.0 * trace.h[l].data()[i] * var_path.data()[i];
        // ReLU mask of the producing pre-activation.
        if (!(trace.pre[l - 1].data()[i] > 0.0)) dh.data()[i] = 0.0;
      }
      d_pre[l - 1] = std::move(dh);
    }
  }

  // Per-layer clip ratios, then one batched reduction per parameter block.
  result.grad_sum.resize(layer_count);
  for (std::size_t l = 0; l < layer_count; ++l) {
    const VariationalLayer& layer = net.layers[l];
    std::vector<double> r(s_batch, 1.0);
    if (opts.clip_per_layer) {
      const double c = *opts.clip_per_layer;
      const std::vector<double> hs = row_squared_norms(trace.h[l]);
      const std::vector<double> ds = row_squared_norms(d_pre[l]);
      std::vector<double> norm2(s_batch);
      for (std::size_t i = 0; i < s_batch; ++i) {
        norm2[i] = ds[i] * (1.0 + hs[i]);  // phi block + bias block
      }
      if (opts.zeta_grad) {
        const Matrix v =
            matmul(hadamard(u[l], u[l]), transpose(scale(trace.zsq[l], 4.0)));
        const Matrix h4 = hadamard(trace.hsq[l], trace.hsq[l]);
        const std::vector<double> zn = detail::rowdot(h4, v);
        for (std::size_t i = 0; i < s_batch; ++i) norm2[i] += zn[i];
      }
      if (opts.kl_weight != 0.0) {
        const double share = opts.kl_weight / static_cast<double>(s_batch);
        double k2 = 0.0;
        for (double g : kl_dphi[l].data()) k2 += g * g;
        std::vector<double> cross =
            detail::rowdot(matmul(trace.h[l], kl_dphi[l]), d_pre[l]);
        if (opts.zeta_grad) {
          for (double g : kl_dzeta[l].data()) k2 += g * g;
          const Matrix q = matmul(
              trace.hsq[l], hadamard(scale(layer.zeta, 2.0), kl_dzeta[l]));
          const std::vector<double> zcross = detail::rowdot(q, u[l]);
          for (std::size_t i = 0; i < s_batch; ++i) cross[i] += zcross[i];
        }
        for (std::size_t i = 0; i < s_batch; ++i) {
          norm2[i] += 2.0 * share * cross[i] + share * share * k2;
        }
      }
      for (std::size_t i = 0; i < s_batch; ++i) {
        const double norm = std::sqrt(std::max(norm2[i], 0.0));
        if (norm > c) r[i] = c / norm;
      }
    }

    double r_sum = 0.0;
    for (double ri : r) r_sum += ri;

    const Matrix d_scaled = detail::row_scale(d_pre[l], r);
    LayerGrad grad;
    grad.dphi = matmul(transpose(trace.h[l]), d_scaled);
    grad.dbias = colsum(d_scaled);
    if (opts.zeta_grad) {
      const Matrix u_scaled = detail::row_scale(u[l], r);
      grad.dzeta = hadamard(scale(layer.zeta, 2.0),
                            matmul(transpose(trace.hsq[l]), u_scaled));
    } else {
      grad.dzeta = Matrix(layer.in_dim(), layer.out_dim());
    }
    if (opts.kl_weight != 0.0) {
      const double coef =
          opts.kl_weight * (r_sum / static_cast<double>(s_batch));
      axpy_inplace(grad.dphi, coef, kl_dphi[l]);
      if (opts.zeta_grad) axpy_inplace(grad.dzeta, coef, kl_dzeta[l]);
    }
    result.grad_sum[l] = std::move(grad);
  }
  return result;
}

// Objective value with internally drawn noise (one sample per batch row).
inline ElboEstimate elbo_minibatch(const Network& net, const Batch& batch,
                                   std::size_t n_total, Rng& rng) {
  net.validate();
  detail::check_batch(net, batch, n_total);
  const LrtNoise noise = draw_lrt_noise(net, batch.size(), rng);
  const detail::ForwardTrace trace =
      detail::forward_trace(net, batch.features, noise);
  return detail::elbo_from_trace(net, batch, n_total, trace, 1.0);
}

// Objective value at fixed noise.
inline ElboEstimate elbo_with_noise(const Network& net, const Batch& batch,
                                    std::size_t n_total, const LrtNoise& noise,
                                    double kl_weight = 1.0) {
  net.validate();
  detail::check_batch(net, batch, n_total);
  const detail::ForwardTrace trace =
      detail::forward_trace(net, batch.features, noise);
  return detail::elbo_from_trace(net, batch, n_total, trace, kl_weight);
}

// Exact gradient of the negative minibatch objective (no clipping), holding
// internally drawn noise fixed (pathwise derivative).
inline std::vector<LayerGrad> backward(const Network& net, const Batch& batch,
                                       std::size_t n_total, Rng& rng) {
  const LrtNoise noise = draw_lrt_noise(net, batch.size(), rng);
  return objective_gradients(net, batch, n_total, noise, ObjectiveOptions{})
      .grad_sum;
}

// As backward, but at caller-fixed noise.
inline std::vector<LayerGrad> backward_with_noise(const Network& net,
                                                  const Batch& batch,
                                                  std::size_t n_total,
                                                  const LrtNoise& noise,
                                                  double kl_weight = 1.0) {
  ObjectiveOptions opts;
  opts.kl_weight = kl_weight;
  return objective_gradients(net, batch, n_total, noise, opts).grad_sum;
}

}  // namespace dpvd

#endif  // DPVD_OBJECTIVE_H_
