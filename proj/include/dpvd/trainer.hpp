// Copyright 2026 The dpvd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPVD_TRAINER_H_
#define DPVD_TRAINER_H_

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dpvd/accountant.hpp"
#include "dpvd/dataset.hpp"
#include "dpvd/matrix.hpp"
#include "dpvd/network.hpp"
#include "dpvd/objective.hpp"
#include "dpvd/rng.hpp"

namespace dpvd {

enum class TrainMode {
  kDpvd,          // clipped averages, noisy released weights, noisy mean
  kSviNoDropout,  // deterministic net (zeta == 0), clipped + noised gradient
  kNonprivate,    // plain stochastic variational training
};

inline const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kDpvd:
      return "dpvd";
    case TrainMode::kSviNoDropout:
      return "svi_no_dropout";
    case TrainMode::kNonprivate:
      return "nonprivate";
  }
  return "unknown";
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t minibatch = 100;
  std::vector<std::size_t> hidden = {1000};
  double lr0 = 0.05;
  double decay = 1.0;  // step size lr0 / epoch^decay
  double clip_c = 2.0;
  double kl_weight = 1.0;
  double init_alpha = 0.01;  // nonprivate zeta init: sqrt(alpha) * |phi|
  TrainMode mode = TrainMode::kNonprivate;
  AccountingMethod method = AccountingMethod::kZcdp;
  double epsilon_total = 1.0;
  double delta_total = 1e-5;
  // Bypasses budget solving: noise std becomes 2 * clip_c * sigma_override
  // and spend columns are reported without enforcement (0 disables noise).
  std::optional<double> sigma_override;
  bool learn_zeta_private = false;  // no privacy claim when set
  std::size_t eval_every = 1;       // epochs between accuracy rows
  std::uint64_t seed = 1;
};

struct EpochRow {
  std::size_t epoch = 0;
  double elbo = 0.0;  // mean minibatch objective over the epoch's steps
  double train_acc = 0.0;
  double test_acc = 0.0;
  double rho_spent = 0.0;
  double eps_spent = 0.0;
};

struct TrainReport {
  std::vector<EpochRow> rows;
  double final_train_acc = 0.0;
  double final_test_acc = 0.0;
  double sigma = 0.0;
  std::size_t steps = 0;
  double rho_spent = 0.0;
  double eps_spent = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  // Mean parameters phi; prediction is deterministic at test time, so this
  // is the evaluated and checkpointed network in every mode.
  Network net;
  // Last sampled weights theta = phi + noise - eta * avg (equal to net
  // outside DPVD mode, where no weight sample is released).
  Network released;
  TrainReport report;
};

// s distinct indices drawn uniformly without replacement.
inline std::vector<std::size_t> sample_minibatch_indices(std::size_t n,
                                                         std::size_t s,
                                                         Rng& rng) {
  if (s < 1 || s > n) {
    throw std::invalid_argument("sample_minibatch: need 1 <= s <= n");
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = i + rng.next_u64() % (n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(s);
  return pool;
}

inline Batch sample_minibatch(const LabeledDataset& data, std::size_t s,
                              Rng& rng) {
  const auto idx = sample_minibatch_indices(data.size(), s, rng);
  return gather_batch(data, idx);
}

inline double evaluate(const Network& net, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  const std::vector<int> pred = predict(net, data.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (pred[i] == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace detail {

struct StepGrads {
  ElboEstimate est;
  std::vector<LayerGrad> avg;
};

// One noise draw, one backward pass, batch average. All modes funnel through
// this so that a huge clip bound is arithmetically identical to no clipping.
inline StepGrads minibatch_avg_gradient(const Network& net, const Batch& batch,
                                        std::size_t n_total, Rng& rng,
                                        const ObjectiveOptions& opts) {
  const LrtNoise noise = draw_lrt_noise(net, batch.size(), rng);
  ObjectiveResult res = objective_gradients(net, batch, n_total, noise, opts);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (LayerGrad& g : res.grad_sum) {
    for (double& v : g.dphi.data()) v *= inv;
    for (double& v : g.dzeta.data()) v *= inv;
    for (double& v : g.dbias.data()) v *= inv;
  }
  return {res.elbo, std::move(res.grad_sum)};
}

}  // namespace detail

// Average of per-example per-layer clipped gradients.
inline std::vector<LayerGrad> clipped_avg_gradient(const Network& net,
                                                   const Batch& batch,
                                                   std::size_t n_total,
                                                   Rng& rng, double clip_c,
                                                   double kl_weight = 1.0,
                                                   bool zeta_grad = false) {
  ObjectiveOptions opts;
  opts.kl_weight = kl_weight;
  opts.clip_per_layer = clip_c;
  opts.zeta_grad = zeta_grad;
  return detail::minibatch_avg_gradient(net, batch, n_total, rng, opts).avg;
}

// Mutable training state. `mean` holds the gradient-following parameters;
// `released` holds what is published (equal to `mean` outside DPVD mode).
struct TrainState {
  Network mean;
  Network released;
  std::optional<BudgetLedger> ledger;
  double sigma = 0.0;      // relative noise multiplier
  double noise_std = 0.0;  // 2 * clip_c * sigma
  std::size_t steps = 0;
};

// One optimization step at step size eta. DPVD: released <- mean + noise -
// eta * avg and mean <- mean - eta * avg; the noise never enters the mean.
// SVI: mean <- mean - eta * (avg + noise / s). NONPRIVATE: plain step with
// learnable zeta clamped at 0. Throws BudgetError before mutating anything
// when the ledger would overspend.
inline ElboEstimate train_step(TrainState& state, const Batch& batch,
                               std::size_t n_total, double eta,
                               const TrainConfig& cfg, Rng& rng) {
  if (!(eta > 0.0)) {
    throw std::invalid_argument("train_step: eta must be > 0");
  }
  if (state.ledger) state.ledger->advance();

  ObjectiveOptions opts;
  opts.kl_weight =
      cfg.mode == TrainMode::kSviNoDropout ? 0.0 : cfg.kl_weight;
  if (cfg.mode != TrainMode::kNonprivate) opts.clip_per_layer = cfg.clip_c;
  opts.zeta_grad =
      cfg.mode == TrainMode::kNonprivate ||
      (cfg.mode == TrainMode::kDpvd && cfg.learn_zeta_private);

  detail::StepGrads step =
      detail::minibatch_avg_gradient(state.mean, batch, n_total, rng, opts);

  const double s = static_cast<double>(batch.size());
  for (std::size_t l = 0; l < state.mean.layers.size(); ++l) {
    VariationalLayer& layer = state.mean.layers[l];
    const LayerGrad& g = step.avg[l];
    switch (cfg.mode) {
      case TrainMode::kDpvd: {
        VariationalLayer& out = state.released.layers[l];
        axpy_inplace(layer.phi, -eta, g.dphi);
        axpy_inplace(layer.bias, -eta, g.dbias);
        out.phi = layer.phi;
        out.bias = layer.bias;
        if (state.noise_std > 0.0) {
          axpy_inplace(out.phi, 1.0,
                       gaussian_sample(rng, out.phi.rows(), out.phi.cols(),
                                       0.0, state.noise_std));
          axpy_inplace(out.bias, 1.0,
                       gaussian_sample(rng, 1, out.bias.cols(), 0.0,
                                       state.noise_std));
        }
        if (cfg.learn_zeta_private) {
          axpy_inplace(layer.zeta, -eta, g.dzeta);
          for (double& z : layer.zeta.data()) z = z < 0.0 ? 0.0 : z;
        }
        out.zeta = layer.zeta;
        break;
      }
      case TrainMode::kSviNoDropout: {
        Matrix upd_phi = g.dphi;
        Matrix upd_bias = g.dbias;
        if (state.noise_std > 0.0) {
          axpy_inplace(upd_phi, 1.0 / s,
                       gaussian_sample(rng, upd_phi.rows(), upd_phi.cols(),
                                       0.0, state.noise_std));
          axpy_inplace(upd_bias, 1.0 / s,
                       gaussian_sample(rng, 1, upd_bias.cols(), 0.0,
                                       state.noise_std));
        }
        axpy_inplace(layer.phi, -eta, upd_phi);
        axpy_inplace(layer.bias, -eta, upd_bias);
        break;
      }
      case TrainMode::kNonprivate: {
        axpy_inplace(layer.phi, -eta, g.dphi);
        axpy_inplace(layer.bias, -eta, g.dbias);
        axpy_inplace(layer.zeta, -eta, g.dzeta);
        for (double& z : layer.zeta.data()) z = z < 0.0 ? 0.0 : z;
        break;
      }
    }
  }
  ++state.steps;
  return step.est;
}

namespace detail {

inline void fill_budget_columns(const TrainState& state, double nu,
                                double delta_total, bool dp, EpochRow* row) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (state.ledger) {
    row->rho_spent = state.ledger->rho_spent();
    row->eps_spent = state.ledger->epsilon_spent();
  } else if (dp && state.sigma > 0.0) {
    // Overridden sigma: report the zCDP view of the spend, unenforced.
    row->rho_spent = static_cast<double>(state.steps) *
                     zcdp_step_subsampled(state.sigma, nu);
    row->eps_spent = zcdp_to_dp(row->rho_spent, delta_total);
  } else {
    row->rho_spent = kInf;
    row->eps_spent = kInf;
  }
}

}  // namespace detail

// Full Algorithm-style training loop: T = epochs / (s/n) steps, the step
// size decaying per epoch, one evaluated report row per eval_every epochs
// (the final epoch always reports).
inline TrainResult train(const LabeledDataset& train_data,
                         const LabeledDataset& test_data,
                         const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = train_data.size();
  if (n == 0) throw std::invalid_argument("train: empty training set");
  if (cfg.minibatch < 1 || cfg.minibatch > n) {
    throw std::invalid_argument("train: need 1 <= minibatch <= data size");
  }
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(cfg.lr0 > 0.0)) throw std::invalid_argument("train: lr0 must be > 0");
  if (!(cfg.decay >= 0.0)) {
    throw std::invalid_argument("train: decay must be >= 0");
  }
  if (!(cfg.init_alpha >= 0.0)) {
    throw std::invalid_argument("train: init_alpha must be >= 0");
  }
  if (cfg.eval_every < 1) {
    throw std::invalid_argument("train: eval_every must be >= 1");
  }
  const bool dp = cfg.mode != TrainMode::kNonprivate;
  if (dp && !(cfg.clip_c > 0.0)) {
    throw std::invalid_argument("train: clip_c must be > 0");
  }

  const double nu = static_cast<double>(cfg.minibatch) / static_cast<double>(n);
  const std::size_t t_steps = static_cast<std::size_t>(std::llround(
      static_cast<double>(cfg.epochs) * static_cast<double>(n) /
      static_cast<double>(cfg.minibatch)));

  Rng master(cfg.seed);
  Rng rng_init = master.split();
  Rng rng_data = master.split();
  Rng rng_noise = master.split();

  std::vector<std::size_t> dims;
  dims.push_back(train_data.features.cols());
  for (std::size_t h : cfg.hidden) dims.push_back(h);
  dims.push_back(10);

  TrainState state;
  state.mean = make_network(
      dims, rng_init,
      cfg.mode == TrainMode::kNonprivate ? cfg.init_alpha : 0.0);
  if (dp) {
    if (cfg.sigma_override) {
      if (!(*cfg.sigma_override >= 0.0)) {
        throw std::invalid_argument("train: sigma_override must be >= 0");
      }
      state.sigma = *cfg.sigma_override;
    } else {
      PrivacyParams params;
      params.epsilon_total = cfg.epsilon_total;
      params.delta_total = cfg.delta_total;
      params.clip_c = cfg.clip_c;
      params.sampling_nu = nu;
      params.iterations_t = t_steps;
      params.method = cfg.method;
      state.sigma = solve_sigma(params);
      state.ledger.emplace(params, state.sigma);
    }
    state.noise_std =
        state.sigma > 0.0 ? noise_std_for_update(state.sigma, cfg.clip_c)
                          : 0.0;
    if (cfg.mode == TrainMode::kDpvd) {
      // The dropout noise is pinned to the privacy noise scale.
      for (VariationalLayer& layer : state.mean.layers) {
        for (double& z : layer.zeta.data()) z = state.noise_std;
      }
    }
  }
  state.released = state.mean;

  TrainResult result;
  result.report.sigma = state.sigma;
  result.report.steps = t_steps;

  double elbo_sum = 0.0;
  std::size_t elbo_steps = 0;
  for (std::size_t step = 1; step <= t_steps; ++step) {
    const std::size_t epoch = 1 + ((step - 1) * cfg.epochs) / t_steps;
    const double eta = cfg.lr0 / std::pow(static_cast<double>(epoch),
                                          cfg.decay);
    const Batch batch = sample_minibatch(train_data, cfg.minibatch, rng_data);
    const ElboEstimate est = train_step(state, batch, n, eta, cfg, rng_noise);
    elbo_sum += est.elbo;
    ++elbo_steps;

    const bool epoch_end =
        step == t_steps || 1 + (step * cfg.epochs) / t_steps != epoch;
    if (!epoch_end) continue;
    if (epoch % cfg.eval_every == 0 || step == t_steps) {
      EpochRow row;
      row.epoch = epoch;
      row.elbo = elbo_sum / static_cast<double>(elbo_steps);
      row.train_acc = evaluate(state.mean, train_data);
      row.test_acc = evaluate(state.mean, test_data);
      detail::fill_budget_columns(state, nu, cfg.delta_total, dp, &row);
      result.report.rows.push_back(row);
    }
    elbo_sum = 0.0;
    elbo_steps = 0;
  }

  const EpochRow& last = result.report.rows.back();
  result.report.final_train_acc = last.train_acc;
  result.report.final_test_acc = last.test_acc;
  result.report.rho_spent = last.rho_spent;
  result.report.eps_spent = last.eps_spent;
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  result.net = state.mean;
  result.released = state.released;
  return result;
}

}  // namespace dpvd

#endif  // DPVD_TRAINER_H_
