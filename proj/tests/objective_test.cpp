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

#include "dpvd/objective.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "dpvd/dataset.hpp"
#include "dpvd/matrix.hpp"
#include "dpvd/network.hpp"
#include "dpvd/rng.hpp"
#include "test_util.hpp"

namespace dpvd {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

TEST(KlAlphaTest, FrozenReferenceValue) {
  EXPECT_TRUE(dpvd_test::RelNear(kl_alpha(1.0), 0.431238950990308827, 1e-12));
}

TEST(KlAlphaTest, LimitsAndDomain) {
  EXPECT_EQ(kl_alpha(kInf), 0.0);
  EXPECT_EQ(kl_alpha(0.0), kInf);
  EXPECT_LT(kl_alpha(1e16), 1e-4);
  EXPECT_GT(kl_alpha(1e-12), 10.0);
  EXPECT_THROW(kl_alpha(-0.5), std::invalid_argument);
}

TEST(KlAlphaTest, StrictlyDecreasing) {
  double prev = kl_alpha(1e-4);
  for (int k = 1; k <= 160; ++k) {
    const double a = std::pow(10.0, -4.0 + 0.05 * k);
    const double v = kl_alpha(a);
    EXPECT_LT(v, prev) << "alpha=" << a;
    prev = v;
  }
}

TEST(KlAlphaTest, DerivativeMatchesFiniteDifference) {
  for (double a : {1e-3, 0.04, 0.3, 1.0, 7.0, 120.0, 1e3}) {
    const double h = 1e-6 * a;
    const double fd = (kl_alpha(a + h) - kl_alpha(a - h)) / (2.0 * h);
    EXPECT_TRUE(dpvd_test::RelNear(kl_alpha_derivative(a), fd, 1e-5))
        << "alpha=" << a;
  }
  EXPECT_EQ(kl_alpha_derivative(0.0), 0.0);
  EXPECT_EQ(kl_alpha_derivative(kInf), 0.0);
}

TEST(KlEntryTest, DegenerateSlices) {
  EXPECT_EQ(kl_entry(0.0, 0.5), 0.0);
  EXPECT_EQ(kl_entry(0.0, 0.0), 0.0);
  EXPECT_EQ(kl_entry(1.0, 0.0), kInf);
  EXPECT_EQ(kl_entry_grad(0.0, 0.5), (std::pair<double, double>{0.0, 0.0}));
  EXPECT_EQ(kl_entry_grad(1.0, 0.0), (std::pair<double, double>{0.0, 0.0}));
}

TEST(KlEntryTest, GradMatchesFiniteDifference) {
  const double h = 1e-7;
  for (double phi : {0.4, -0.8, 1.7, -0.05}) {
    for (double zeta : {0.03, 0.2, 1.1}) {
      const auto [dphi, dzeta] = kl_entry_grad(phi, zeta);
      const double fd_phi =
          (kl_entry(phi + h, zeta) - kl_entry(phi - h, zeta)) / (2.0 * h);
      const double fd_zeta =
          (kl_entry(phi, zeta + h) - kl_entry(phi, zeta - h)) / (2.0 * h);
      EXPECT_TRUE(dpvd_test::RelNear(dphi, fd_phi, 1e-4))
          << phi << " " << zeta;
      EXPECT_TRUE(dpvd_test::RelNear(dzeta, fd_zeta, 1e-4))
          << phi << " " << zeta;
    }
  }
}

TEST(KlTermTest, SumsEntries) {
  const Matrix phi(2, 1, {0.5, -1.2});
  const Matrix zeta(2, 1, {0.3, 0.4});
  EXPECT_DOUBLE_EQ(kl_term(zeta, phi),
                   kl_entry(0.5, 0.3) + kl_entry(-1.2, 0.4));
}

double NormalPdf(double u, double var) {
  return std::exp(-0.5 * (u - 1.0) * (u - 1.0) / var) /
         std::sqrt(2.0 * std::numbers::pi * var);
}

// E[ln|u|] for u ~ N(1, alpha), by trapezoid quadrature in log coordinates:
// split the axis at zero and substitute u = e^v and u = -e^v.
double ExpectedLogAbs(double alpha, double step) {
  const double lo = -45.0;
  const double hi = std::log(1.0 + 12.0 * std::sqrt(alpha)) + 2.0;
  const auto integrand = [alpha](double v) {
    const double ev = std::exp(v);
    return (NormalPdf(ev, alpha) + NormalPdf(-ev, alpha)) * ev * v;
  };
  const std::size_t n =
      static_cast<std::size_t>(std::ceil((hi - lo) / step));
  const double h = (hi - lo) / static_cast<double>(n);
  double acc = 0.5 * (integrand(lo) + integrand(hi));
  for (std::size_t k = 1; k < n; ++k) {
    acc += integrand(lo + h * static_cast<double>(k));
  }
  return acc * h;
}

// The KL against the log-uniform prior is only defined up to an additive
// constant; align the quadrature ground truth to the approximation far in
// the high-alpha regime and bound the maximum deviation elsewhere.
TEST(KlAlphaTest, MatchesQuadratureOracleUpToConstant) {
  const double kStep = 1e-3;
  const auto kl_true = [&](double a, double step) {
    return -0.5 * std::log(a) + ExpectedLogAbs(a, step);
  };

  // Quadrature self-consistency at two resolutions.
  for (double a : {1e-3, 1.0, 1e3}) {
    EXPECT_NEAR(ExpectedLogAbs(a, kStep), ExpectedLogAbs(a, kStep / 2.0),
                1e-6);
  }

  const double offset = kl_alpha(1e4) - kl_true(1e4, kStep);
  // The alignment constant approaches (euler_gamma + ln 2) / 2.
  EXPECT_NEAR(offset, 0.6351814227, 1e-3);

  double worst = 0.0;
  for (int k = 0; k <= 60; ++k) {
    const double a = std::pow(10.0, -3.0 + 0.1 * k);
    const double dev = std::fabs(kl_alpha(a) - (kl_true(a, kStep) + offset));
    worst = std::max(worst, dev);
  }
  EXPECT_LE(worst, 0.02);
  EXPECT_GT(worst, 1e-4);  // it is an approximation, not an identity
}

Batch FullBatch(const Matrix& x, std::vector<int> labels) {
  Batch b;
  b.features = x;
  b.labels = std::move(labels);
  return b;
}

TEST(ElboTest, FullBatchZeroZetaMatchesDeterministicLoglik) {
  Rng rng(21);
  Network net = make_network({6, 5, 4}, rng, 0.0);
  const Matrix x = gaussian_sample(rng, 20, 6, 0.0, 1.0);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) labels[i] = i % 4;
  const Batch batch = FullBatch(x, labels);

  Rng noise_rng(5);
  const ElboEstimate est = elbo_minibatch(net, batch, 20, noise_rng);

  const Matrix logp = forward_deterministic(net, x);
  double ll = 0.0;
  for (int i = 0; i < 20; ++i) ll += logp(i, labels[i]);
  EXPECT_DOUBLE_EQ(est.expected_loglik, ll);
}

TEST(ElboTest, DoublingPopulationDoublesLoglikExactly) {
  Rng rng(22);
  Network net = make_network({4, 3}, rng, 0.0);
  const Matrix x = gaussian_sample(rng, 5, 4, 0.0, 1.0);
  const Batch batch = FullBatch(x, {0, 1, 2, 0, 1});

  Rng r1(9), r2(9);
  const ElboEstimate a = elbo_minibatch(net, batch, 5, r1);
  const ElboEstimate b = elbo_minibatch(net, batch, 10, r2);
  EXPECT_DOUBLE_EQ(b.expected_loglik, 2.0 * a.expected_loglik);
}

TEST(ElboTest, DecompositionIdentityHolds) {
  Rng rng(23);
  Network net = make_network({4, 6, 3}, rng, 0.04);
  const Matrix x = gaussian_sample(rng, 7, 4, 0.0, 1.0);
  const Batch batch = FullBatch(x, {0, 1, 2, 0, 1, 2, 0});

  Rng noise_rng(3);
  const LrtNoise noise = draw_lrt_noise(net, batch.size(), noise_rng);
  const ElboEstimate est = elbo_with_noise(net, batch, 50, noise);
  EXPECT_GT(est.kl, 0.0);
  EXPECT_DOUBLE_EQ(est.elbo, est.expected_loglik - est.kl);

  const ElboEstimate no_kl = elbo_with_noise(net, batch, 50, noise, 0.0);
  EXPECT_EQ(no_kl.kl, 0.0);
  EXPECT_DOUBLE_EQ(no_kl.elbo, no_kl.expected_loglik);
  EXPECT_DOUBLE_EQ(no_kl.expected_loglik, est.expected_loglik);
}

TEST(ElboTest, NoiseIsSeedReproducible) {
  Rng rng(24);
  Network net = make_network({4, 6, 3}, rng, 0.1);
  const Matrix x = gaussian_sample(rng, 7, 4, 0.0, 1.0);
  const Batch batch = FullBatch(x, {0, 1, 2, 0, 1, 2, 0});

  Rng r1(40), r2(40), r3(41);
  EXPECT_EQ(elbo_minibatch(net, batch, 7, r1).elbo,
            elbo_minibatch(net, batch, 7, r2).elbo);
  EXPECT_NE(elbo_minibatch(net, FullBatch(x, batch.labels), 7, r3).elbo,
            elbo_minibatch(net, FullBatch(x, batch.labels), 7, r1).elbo);
}

// Distinct uniform indices for the subsampling test below.
std::vector<std::size_t> DrawIndices(std::size_t n, std::size_t s, Rng& rng,
                                     std::vector<std::size_t>& pool) {
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t j = i + rng.next_u64() % (n - i);
    std::swap(pool[i], pool[j]);
  }
  return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(s)};
}

TEST(ElboTest, MinibatchLoglikIsUnbiasedUnderSubsampling) {
  Rng rng(25);
  Network net = make_network({5, 6, 10}, rng, 0.0);
  const std::size_t n = 50, s = 10;
  LabeledDataset ds;
  ds.features = gaussian_sample(rng, n, 5, 0.4, 1.0);
  for (double& v : ds.features.data()) v = std::fabs(v) / 6.0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels.push_back(static_cast<int>(i % 10));
  }

  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  Rng noise_rng(1);
  const double full =
      elbo_minibatch(net, gather_batch(ds, all), n, noise_rng).expected_loglik;

  const std::size_t reps = 1000;
  std::vector<double> est(reps);
  std::vector<std::size_t> pool(n);
  Rng pick(99);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto idx = DrawIndices(n, s, pick, pool);
    est[r] = elbo_minibatch(net, gather_batch(ds, idx), n, noise_rng)
                 .expected_loglik;
  }
  double mean = 0.0;
  for (double e : est) mean += e;
  mean /= static_cast<double>(reps);
  double var = 0.0;
  for (double e : est) var += (e - mean) * (e - mean);
  var /= static_cast<double>(reps - 1);
  const double se = std::sqrt(var / static_cast<double>(reps));
  EXPECT_NEAR(mean, full, 4.0 * se);
}

// Fixed small problem with every ReLU pre-activation and every nonzero noise
// scale bounded away from the kinks, so central differences are trustworthy.
struct FdProblem {
  Network net;
  Batch batch;
  LrtNoise noise;
  std::size_t n_total = 7;
};

FdProblem MakeFdProblem() {
  FdProblem p;
  VariationalLayer l0;
  l0.phi = Matrix(4, 2, {0.8, -0.5, -0.6, 0.9, 0.7, 0.4, -0.3, -0.8});
  l0.zeta = Matrix(4, 2, {0.15, 0.22, 0.18, 0.11, 0.25, 0.16, 0.12, 0.28});
  l0.bias = Matrix(1, 2, {0.2, -0.1});
  VariationalLayer l1;
  l1.phi = Matrix(2, 3, {0.9, -0.7, 0.5, -0.4, 0.8, -0.6});
  l1.zeta = Matrix(2, 3, {0.21, 0.13, 0.17, 0.14, 0.26, 0.19});
  l1.bias = Matrix(1, 3, {0.1, -0.2, 0.15});
  p.net.layers = {l0, l1};

  p.batch.features = Matrix(3, 4,
                            {0.9, -0.6, 1.2, 0.5,     //
                             -1.1, 0.8, 0.4, -0.7,    //
                             0.6, 1.0, -0.9, -1.3});
  p.batch.labels = {0, 2, 1};

  p.noise.eps.push_back(
      Matrix(3, 2, {0.5, -1.1, 0.3, 0.8, -0.7, 0.4}));
  p.noise.eps.push_back(
      Matrix(3, 3, {1.2, -0.3, 0.6, -0.9, 0.5, -0.2, 0.4, 1.0, -0.8}));
  return p;
}

void AssertWellConditioned(const FdProblem& p) {
  const auto trace =
      detail::forward_trace(p.net, p.batch.features, p.noise);
  for (double v : trace.pre[0].data()) {
    ASSERT_GT(std::fabs(v), 0.3) << "hidden pre-activation too close to 0";
  }
  for (double v : trace.sd[1].data()) {
    ASSERT_GT(v, 0.05) << "noise scale too close to 0";
  }
}

// Central differences over every parameter of the network.
template <typename F>
std::vector<LayerGrad> FiniteDifferenceGrads(const Network& net, F&& f,
                                             double h) {
  std::vector<LayerGrad> out(net.layers.size());
  Network work = net;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::size_t in = net.layers[l].in_dim();
    const std::size_t outd = net.layers[l].out_dim();
    out[l].dphi = Matrix(in, outd);
    out[l].dzeta = Matrix(in, outd);
    out[l].dbias = Matrix(1, outd);
    const auto probe = [&](Matrix VariationalLayer::* block,
                           Matrix LayerGrad::* gblock) {
      Matrix& m = work.layers[l].*block;
      Matrix& g = out[l].*gblock;
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double orig = m.data()[i];
        m.data()[i] = orig + h;
        const double fp = f(work);
        m.data()[i] = orig - h;
        const double fm = f(work);
        m.data()[i] = orig;
        g.data()[i] = (fp - fm) / (2.0 * h);
      }
    };
    probe(&VariationalLayer::phi, &LayerGrad::dphi);
    probe(&VariationalLayer::zeta, &LayerGrad::dzeta);
    probe(&VariationalLayer::bias, &LayerGrad::dbias);
  }
  return out;
}

double BlockRelError(const Matrix& a, const Matrix& b) {
  EXPECT_TRUE(a.same_shape(b));
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    diff += d * d;
    na += a.data()[i] * a.data()[i];
    nb += b.data()[i] * b.data()[i];
  }
  const double denom =
      std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

void ExpectGradsClose(const std::vector<LayerGrad>& got,
                      const std::vector<LayerGrad>& want, double rtol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t l = 0; l < got.size(); ++l) {
    EXPECT_LE(BlockRelError(got[l].dphi, want[l].dphi), rtol) << "dphi " << l;
    EXPECT_LE(BlockRelError(got[l].dzeta, want[l].dzeta), rtol)
        << "dzeta " << l;
    EXPECT_LE(BlockRelError(got[l].dbias, want[l].dbias), rtol)
        << "dbias " << l;
  }
}

TEST(BackwardTest, MatchesFiniteDifferencesWithKl) {
  const FdProblem p = MakeFdProblem();
  AssertWellConditioned(p);

  const auto analytic =
      backward_with_noise(p.net, p.batch, p.n_total, p.noise, 1.0);
  const auto fd = FiniteDifferenceGrads(
      p.net,
      [&](const Network& w) {
        return -elbo_with_noise(w, p.batch, p.n_total, p.noise, 1.0).elbo;
      },
      1e-5);
  ExpectGradsClose(analytic, fd, 1e-4);
}

TEST(BackwardTest, MatchesFiniteDifferencesLikelihoodOnly) {
  const FdProblem p = MakeFdProblem();
  const auto analytic =
      backward_with_noise(p.net, p.batch, p.n_total, p.noise, 0.0);
  const auto fd = FiniteDifferenceGrads(
      p.net,
      [&](const Network& w) {
        return -elbo_with_noise(w, p.batch, p.n_total, p.noise, 0.0).elbo;
      },
      1e-5);
  ExpectGradsClose(analytic, fd, 1e-4);
}

// Plain-loop softmax cross entropy backprop, written without the library
// matrix helpers, for the deterministic special case zeta == 0, kl off.
TEST(BackwardTest, MatchesHandRolledCrossEntropyOracle) {
  Rng rng(77);
  Network net = make_network({4, 5, 3}, rng, 0.0);
  const std::size_t s = 6, n_total = 13;
  const Matrix x = gaussian_sample(rng, s, 4, 0.0, 1.0);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2};

  const auto& w0 = net.layers[0].phi;
  const auto& b0 = net.layers[0].bias;
  const auto& w1 = net.layers[1].phi;
  const auto& b1 = net.layers[1].bias;

  std::vector<std::vector<double>> pre0(s, std::vector<double>(5, 0.0));
  std::vector<std::vector<double>> hid(s, std::vector<double>(5, 0.0));
  std::vector<std::vector<double>> prob(s, std::vector<double>(3, 0.0));
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = b0(0, j);
      for (std::size_t k = 0; k < 4; ++k) acc += x(i, k) * w0(k, j);
      pre0[i][j] = acc;
      hid[i][j] = acc > 0.0 ? acc : 0.0;
    }
    double mx = -kInf;
    std::vector<double> pre1(3, 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = b1(0, j);
      for (std::size_t k = 0; k < 5; ++k) acc += hid[i][k] * w1(k, j);
      pre1[j] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(pre1[j] - mx);
    for (std::size_t j = 0; j < 3; ++j) {
      prob[i][j] = std::exp(pre1[j] - mx) / z;
    }
  }

  const double lik = double(n_total) / double(s);
  std::vector<std::vector<double>> dpre1(s, std::vector<double>(3, 0.0));
  std::vector<std::vector<double>> dpre0(s, std::vector<double>(5, 0.0));
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      dpre1[i][j] =
          lik * (prob[i][j] - (int(j) == labels[i] ? 1.0 : 0.0));
    }
    for (std::size_t k = 0; k < 5; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 3; ++j) acc += dpre1[i][j] * w1(k, j);
      dpre0[i][k] = pre0[i][k] > 0.0 ? acc : 0.0;
    }
  }
  Matrix dw0(4, 5), db0(1, 5), dw1(5, 3), db1(1, 3);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      for (std::size_t j = 0; j < 5; ++j) dw0(k, j) += x(i, k) * dpre0[i][j];
    }
    for (std::size_t j = 0; j < 5; ++j) db0(0, j) += dpre0[i][j];
    for (std::size_t k = 0; k < 5; ++k) {
      for (std::size_t j = 0; j < 3; ++j) {
        dw1(k, j) += hid[i][k] * dpre1[i][j];
      }
    }
    for (std::size_t j = 0; j < 3; ++j) db1(0, j) += dpre1[i][j];
  }

  Rng noise_rng(1);
  const auto got = backward(net, FullBatch(x, labels), n_total, noise_rng);
  // With kl_weight 1 the zero-zeta KL gradients vanish identically, so the
  // result equals the likelihood-only gradient.
  EXPECT_LE(BlockRelError(got[0].dphi, dw0), 1e-11);
  EXPECT_LE(BlockRelError(got[0].dbias, db0), 1e-11);
  EXPECT_LE(BlockRelError(got[1].dphi, dw1), 1e-11);
  EXPECT_LE(BlockRelError(got[1].dbias, db1), 1e-11);
  for (double v : got[0].dzeta.data()) EXPECT_EQ(v, 0.0);
  for (double v : got[1].dzeta.data()) EXPECT_EQ(v, 0.0);
}

TEST(BackwardTest, ZeroZetaKlWeightHasNoEffectOnGradients) {
  Rng rng(78);
  Network net = make_network({4, 5, 3}, rng, 0.0);
  const Matrix x = gaussian_sample(rng, 6, 4, 0.0, 1.0);
  const Batch batch = FullBatch(x, {0, 1, 2, 0, 1, 2});
  Rng r1(4), r2(4);
  const LrtNoise noise = draw_lrt_noise(net, 6, r1);

  const auto with_kl = backward_with_noise(net, batch, 6, noise, 1.0);
  const auto no_kl = backward_with_noise(net, batch, 6, noise, 0.0);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < with_kl[l].dphi.size(); ++i) {
      EXPECT_EQ(with_kl[l].dphi.data()[i], no_kl[l].dphi.data()[i]);
      EXPECT_EQ(with_kl[l].dzeta.data()[i], 0.0);
    }
  }

  // The objective value itself diverges (zero noise on nonzero weights) even
  // though the gradients stay finite.
  ObjectiveOptions opts;
  const auto res = objective_gradients(net, batch, 6, noise, opts);
  EXPECT_EQ(res.elbo.kl, kInf);
  EXPECT_EQ(res.elbo.elbo, -kInf);
}

LrtNoise SliceNoise(const LrtNoise& noise, std::size_t row) {
  LrtNoise out;
  const std::size_t idx[1] = {row};
  for (const Matrix& e : noise.eps) {
    out.eps.push_back(slice_rows(e, idx));
  }
  return out;
}

// Per-example gradients of the clipping target, by central differences on
// -(n/s * loglik_i - kl_weight/s * KL), each example seeing its own noise row.
std::vector<std::vector<LayerGrad>> FdPerExampleGrads(
    const Network& net, const Batch& batch, std::size_t n_total,
    const LrtNoise& noise, double kl_weight) {
  const double s = static_cast<double>(batch.size());
  std::vector<std::vector<LayerGrad>> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t idx[1] = {i};
    Batch one;
    one.features = slice_rows(batch.features, idx);
    one.labels = {batch.labels[i]};
    const LrtNoise ni = SliceNoise(noise, i);
    const auto f = [&](const Network& w) {
      const double ll =
          elbo_with_noise(w, one, 1, ni, 0.0).expected_loglik;
      const double kl = kl_weight == 0.0 ? 0.0 : kl_term(w);
      return -((double(n_total) / s) * ll - (kl_weight / s) * kl);
    };
    out.push_back(FiniteDifferenceGrads(net, f, 1e-5));
  }
  return out;
}

struct ClipProblem {
  Network net;
  Batch batch;
  LrtNoise noise;
  std::size_t n_total = 9;
};

ClipProblem MakeClipProblem() {
  ClipProblem p;
  Rng rng(4242);
  const std::vector<std::size_t> dims = {3, 4, 3};
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    VariationalLayer layer;
    layer.phi = Matrix(dims[l], dims[l + 1]);
    layer.zeta = Matrix(dims[l], dims[l + 1]);
    layer.bias = Matrix(1, dims[l + 1]);
    for (std::size_t i = 0; i < layer.phi.size(); ++i) {
      const double sign = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
      layer.phi.data()[i] = sign * (0.3 + 0.7 * rng.next_uniform());
      layer.zeta.data()[i] = 0.1 + 0.2 * rng.next_uniform();
    }
    for (std::size_t j = 0; j < layer.bias.size(); ++j) {
      layer.bias.data()[j] = 0.4 * rng.next_uniform() - 0.2;
    }
    p.net.layers.push_back(std::move(layer));
  }
  p.batch.features = Matrix(4, 3);
  for (double& v : p.batch.features.data()) {
    const double sign = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * (0.4 + 0.9 * rng.next_uniform());
  }
  p.batch.labels = {0, 2, 1, 1};
  Rng noise_rng(515);
  p.noise = draw_lrt_noise(p.net, 4, noise_rng);

  // Keep the finite differences on smooth ground: hidden pre-activations off
  // the ReLU kink and positive noise scales bounded away from zero.
  const auto trace =
      detail::forward_trace(p.net, p.batch.features, p.noise);
  for (double v : trace.pre[0].data()) {
    EXPECT_GT(std::fabs(v), 5e-2);
  }
  for (std::size_t i = 0; i < trace.sd[1].size(); ++i) {
    if (trace.sd[1].data()[i] > 0.0) {
      EXPECT_GT(trace.sd[1].data()[i], 5e-2);
    }
  }
  return p;
}

std::vector<LayerGrad> OracleClippedSum(
    const std::vector<std::vector<LayerGrad>>& per_example, double clip_c,
    bool zeta_grad) {
  const std::size_t layers = per_example[0].size();
  std::vector<LayerGrad> sum(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& shape = per_example[0][l];
    sum[l].dphi = Matrix(shape.dphi.rows(), shape.dphi.cols());
    sum[l].dzeta = Matrix(shape.dzeta.rows(), shape.dzeta.cols());
    sum[l].dbias = Matrix(shape.dbias.rows(), shape.dbias.cols());
    for (const auto& g : per_example) {
      double norm2 = 0.0;
      for (double v : g[l].dphi.data()) norm2 += v * v;
      for (double v : g[l].dbias.data()) norm2 += v * v;
      if (zeta_grad) {
        for (double v : g[l].dzeta.data()) norm2 += v * v;
      }
      const double norm = std::sqrt(norm2);
      const double r = norm > clip_c ? clip_c / norm : 1.0;
      axpy_inplace(sum[l].dphi, r, g[l].dphi);
      axpy_inplace(sum[l].dbias, r, g[l].dbias);
      if (zeta_grad) axpy_inplace(sum[l].dzeta, r, g[l].dzeta);
    }
  }
  return sum;
}

TEST(ClippingTest, MatchesBruteForcePerExampleOracle) {
  const ClipProblem p = MakeClipProblem();
  const auto per_example =
      FdPerExampleGrads(p.net, p.batch, p.n_total, p.noise, 1.0);

  // The unclipped per-example gradients must sum to the exact batch gradient.
  const auto oracle_unclipped = OracleClippedSum(per_example, 1e300, true);
  const auto exact =
      backward_with_noise(p.net, p.batch, p.n_total, p.noise, 1.0);
  ExpectGradsClose(oracle_unclipped, exact, 1e-6);

  for (double c : {0.5, 2.0}) {
    ObjectiveOptions opts;
    opts.kl_weight = 1.0;
    opts.clip_per_layer = c;
    const auto got =
        objective_gradients(p.net, p.batch, p.n_total, p.noise, opts);
    const auto want = OracleClippedSum(per_example, c, true);
    ExpectGradsClose(got.grad_sum, want, 1e-5);
  }
}

TEST(ClippingTest, HugeBoundIsBitIdenticalToNoClipping) {
  const ClipProblem p = MakeClipProblem();
  ObjectiveOptions no_clip;
  ObjectiveOptions huge;
  huge.clip_per_layer = 1e9;
  const auto a =
      objective_gradients(p.net, p.batch, p.n_total, p.noise, no_clip);
  const auto b = objective_gradients(p.net, p.batch, p.n_total, p.noise, huge);
  for (std::size_t l = 0; l < a.grad_sum.size(); ++l) {
    for (std::size_t i = 0; i < a.grad_sum[l].dphi.size(); ++i) {
      EXPECT_EQ(a.grad_sum[l].dphi.data()[i], b.grad_sum[l].dphi.data()[i]);
      EXPECT_EQ(a.grad_sum[l].dzeta.data()[i], b.grad_sum[l].dzeta.data()[i]);
    }
    for (std::size_t i = 0; i < a.grad_sum[l].dbias.size(); ++i) {
      EXPECT_EQ(a.grad_sum[l].dbias.data()[i], b.grad_sum[l].dbias.data()[i]);
    }
  }
}

TEST(ClippingTest, FrozenZetaVariantMatchesOracle) {
  const ClipProblem p = MakeClipProblem();
  const auto per_example =
      FdPerExampleGrads(p.net, p.batch, p.n_total, p.noise, 0.0);

  ObjectiveOptions opts;
  opts.kl_weight = 0.0;
  opts.zeta_grad = false;
  opts.clip_per_layer = 0.8;
  const auto got =
      objective_gradients(p.net, p.batch, p.n_total, p.noise, opts);
  const auto want = OracleClippedSum(per_example, 0.8, false);
  ExpectGradsClose(got.grad_sum, want, 1e-5);
  for (const auto& layer : got.grad_sum) {
    for (double v : layer.dzeta.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ClippingTest, AveragedGradientRespectsBound) {
  const ClipProblem p = MakeClipProblem();
  for (double c : {0.05, 0.5, 2.0}) {
    ObjectiveOptions opts;
    opts.clip_per_layer = c;
    const auto got =
        objective_gradients(p.net, p.batch, p.n_total, p.noise, opts);
    for (const auto& layer : got.grad_sum) {
      double norm2 = 0.0;
      for (double v : layer.dphi.data()) norm2 += v * v;
      for (double v : layer.dbias.data()) norm2 += v * v;
      for (double v : layer.dzeta.data()) norm2 += v * v;
      const double avg_norm =
          std::sqrt(norm2) / static_cast<double>(p.batch.size());
      EXPECT_LE(avg_norm, c + 1e-9);
    }
  }
}

TEST(ObjectiveTest, RejectsBadInput) {
  Rng rng(8);
  Network net = make_network({3, 4, 3}, rng, 0.01);
  const Matrix x = gaussian_sample(rng, 2, 3, 0.0, 1.0);
  Rng noise_rng(2);
  const LrtNoise noise = draw_lrt_noise(net, 2, noise_rng);
  const ObjectiveOptions opts;

  Batch empty;
  empty.features = Matrix(0, 3);
  EXPECT_THROW(objective_gradients(net, empty, 5, noise, opts),
               std::invalid_argument);

  Batch batch = FullBatch(x, {0, 2});
  EXPECT_THROW(objective_gradients(net, batch, 1, noise, opts),
               std::invalid_argument);

  Batch bad_label = FullBatch(x, {0, 3});
  EXPECT_THROW(objective_gradients(net, bad_label, 5, noise, opts),
               std::invalid_argument);

  ObjectiveOptions bad_clip;
  bad_clip.clip_per_layer = 0.0;
  EXPECT_THROW(objective_gradients(net, batch, 5, noise, bad_clip),
               std::invalid_argument);

  const LrtNoise wrong_rows = draw_lrt_noise(net, 3, noise_rng);
  EXPECT_THROW(objective_gradients(net, batch, 5, wrong_rows, opts),
               std::invalid_argument);

  LrtNoise wrong_layers = noise;
  wrong_layers.eps.pop_back();
  EXPECT_THROW(objective_gradients(net, batch, 5, wrong_layers, opts),
               std::invalid_argument);
}

}  // namespace
}  // namespace dpvd
