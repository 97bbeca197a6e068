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

#include "dpvd/network.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "dpvd/matrix.hpp"
#include "dpvd/rng.hpp"
#include "test_util.hpp"

namespace dpvd {
namespace {

using dpvd_test::TempDir;

TEST(MakeNetworkTest, ShapesAndInitStatistics) {
  Rng rng(11);
  Network net = make_network({64, 300, 10}, rng, 0.01);
  ASSERT_EQ(net.layers.size(), 2u);
  EXPECT_EQ(net.input_dim(), 64u);
  EXPECT_EQ(net.output_dim(), 10u);
  EXPECT_EQ(net.layers[0].phi.rows(), 64u);
  EXPECT_EQ(net.layers[0].phi.cols(), 300u);
  EXPECT_EQ(net.layers[1].phi.rows(), 300u);
  EXPECT_EQ(net.layers[1].phi.cols(), 10u);
  net.validate();

  for (const VariationalLayer& layer : net.layers) {
    for (double b : layer.bias.data()) EXPECT_EQ(b, 0.0);
    // zeta is pinned to sqrt(init_alpha) * |phi| at construction.
    for (std::size_t i = 0; i < layer.phi.size(); ++i) {
      EXPECT_DOUBLE_EQ(layer.zeta.data()[i],
                       0.1 * std::fabs(layer.phi.data()[i]));
    }
  }

  // phi ~ N(0, 2/fan_in): check sample moments of the first layer.
  const auto& phi = net.layers[0].phi.data();
  const double n = static_cast<double>(phi.size());
  double sum = 0.0, sumsq = 0.0;
  for (double v : phi) {
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double std_dev = std::sqrt(sumsq / n - mean * mean);
  const double expected_std = std::sqrt(2.0 / 64.0);
  EXPECT_LT(std::fabs(mean), 4.0 * expected_std / std::sqrt(n));
  EXPECT_TRUE(dpvd_test::RelNear(std_dev, expected_std, 0.03));
}

TEST(MakeNetworkTest, ZeroInitAlphaGivesZeroZeta) {
  Rng rng(3);
  Network net = make_network({5, 4, 3}, rng, 0.0);
  for (const VariationalLayer& layer : net.layers) {
    for (double z : layer.zeta.data()) EXPECT_EQ(z, 0.0);
  }
}

TEST(MakeNetworkTest, RejectsBadArguments) {
  Rng rng(3);
  EXPECT_THROW(make_network({5}, rng), std::invalid_argument);
  EXPECT_THROW(make_network({5, 3}, rng, -0.5), std::invalid_argument);
}

TEST(NetworkValidateTest, CatchesInconsistentShapes) {
  Rng rng(3);
  Network net = make_network({4, 3, 2}, rng);

  Network bad = net;
  bad.layers[0].zeta = Matrix(4, 2);
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  bad = net;
  bad.layers[0].bias = Matrix(2, 3);
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  bad = net;
  bad.layers[0].zeta(1, 1) = -0.25;
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  bad = net;
  bad.layers[1].phi = Matrix(5, 2);
  bad.layers[1].zeta = Matrix(5, 2);
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  Network empty;
  EXPECT_THROW(empty.validate(), std::invalid_argument);
}

TEST(ForwardTest, ZeroZetaSampledAndLrtMatchDeterministicBitwise) {
  Rng rng(7);
  Network net = make_network({6, 5, 4}, rng, 0.0);
  Matrix x = gaussian_sample(rng, 9, 6, 0.0, 1.0);

  const Matrix det = forward_deterministic(net, x);
  Rng r1(99), r2(99);
  const Matrix sampled = forward_sampled(net, x, r1);
  const Matrix lrt = forward_lrt(net, x, r2);
  ASSERT_TRUE(det.same_shape(sampled));
  for (std::size_t i = 0; i < det.size(); ++i) {
    EXPECT_EQ(det.data()[i], sampled.data()[i]);
    EXPECT_EQ(det.data()[i], lrt.data()[i]);
  }
}

TEST(ForwardTest, SampledIsSeedReproducible) {
  Rng rng(7);
  Network net = make_network({6, 5, 4}, rng, 0.04);
  Matrix x = gaussian_sample(rng, 3, 6, 0.0, 1.0);

  Rng a(123), b(123), c(124);
  const Matrix fa = forward_sampled(net, x, a);
  const Matrix fb = forward_sampled(net, x, b);
  const Matrix fc = forward_sampled(net, x, c);
  bool any_diff = false;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    EXPECT_EQ(fa.data()[i], fb.data()[i]);
    any_diff = any_diff || (fa.data()[i] != fc.data()[i]);
  }
  EXPECT_TRUE(any_diff);
}

// One unit fed by three inputs: the sampled pre-activation is Gaussian with
// mean x.phi + bias and variance sum_k x_k^2 zeta_k^2.
VariationalLayer SingleUnitLayer() {
  VariationalLayer layer;
  layer.phi = Matrix(3, 1, {0.3, 0.7, -0.2});
  layer.zeta = Matrix(3, 1, {0.2, 0.1, 0.4});
  layer.bias = Matrix(1, 1, {0.15});
  return layer;
}

void CheckPreactivationMoments(double mean_hat, double var_hat,
                               std::size_t reps) {
  const double mean_true = -0.8;
  const double var_true = 0.66;
  const double n = static_cast<double>(reps);
  const double mean_tol = 3.0 * std::sqrt(var_true / n);
  const double var_tol = 4.0 * var_true * std::sqrt(2.0 / n);
  EXPECT_NEAR(mean_hat, mean_true, mean_tol);
  EXPECT_NEAR(var_hat, var_true, var_tol);
}

TEST(ForwardTest, SampledPreactivationMomentsMatchClosedForm) {
  const VariationalLayer layer = SingleUnitLayer();
  const Matrix x(1, 3, {0.5, -1.0, 2.0});
  Rng rng(2024);
  const std::size_t reps = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const double v = layer_forward_sampled(layer, x, rng)(0, 0);
    sum += v;
    sumsq += v * v;
  }
  const double mean_hat = sum / double(reps);
  const double var_hat = sumsq / double(reps) - mean_hat * mean_hat;
  CheckPreactivationMoments(mean_hat, var_hat, reps);
}

TEST(ForwardTest, LrtPreactivationMomentsMatchClosedForm) {
  const VariationalLayer layer = SingleUnitLayer();
  const Matrix x(1, 3, {0.5, -1.0, 2.0});
  Rng rng(515);
  const std::size_t reps = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    const double v = layer_forward_lrt(layer, x, rng)(0, 0);
    sum += v;
    sumsq += v * v;
  }
  const double mean_hat = sum / double(reps);
  const double var_hat = sumsq / double(reps) - mean_hat * mean_hat;
  CheckPreactivationMoments(mean_hat, var_hat, reps);
}

// Weight sampling and the local trick induce the same marginal distribution
// per pre-activation cell, so the Monte Carlo moments must agree.
TEST(ForwardTest, LrtAndSampledMomentsAgree) {
  Rng init(31);
  VariationalLayer layer;
  layer.phi = gaussian_sample(init, 4, 3, 0.0, 0.8);
  layer.zeta = Matrix(4, 3);
  for (std::size_t i = 0; i < layer.zeta.size(); ++i) {
    layer.zeta.data()[i] = 0.1 + 0.3 * init.next_uniform();
  }
  layer.bias = gaussian_sample(init, 1, 3, 0.0, 0.5);
  const Matrix x(1, 4, {0.9, -0.4, 1.3, 0.6});

  const std::size_t reps = 40000;
  std::vector<double> sum_a(3, 0.0), sq_a(3, 0.0), sum_b(3, 0.0), sq_b(3, 0.0);
  Rng ra(777), rb(778);
  for (std::size_t r = 0; r < reps; ++r) {
    const Matrix a = layer_forward_sampled(layer, x, ra);
    const Matrix b = layer_forward_lrt(layer, x, rb);
    for (std::size_t j = 0; j < 3; ++j) {
      sum_a[j] += a(0, j);
      sq_a[j] += a(0, j) * a(0, j);
      sum_b[j] += b(0, j);
      sq_b[j] += b(0, j) * b(0, j);
    }
  }
  const double n = static_cast<double>(reps);
  for (std::size_t j = 0; j < 3; ++j) {
    const double ma = sum_a[j] / n, mb = sum_b[j] / n;
    const double va = sq_a[j] / n - ma * ma, vb = sq_b[j] / n - mb * mb;
    EXPECT_NEAR(ma, mb, 4.0 * std::sqrt(va / n + vb / n));
    EXPECT_NEAR(va, vb,
                4.0 * std::sqrt(2.0 * va * va / n + 2.0 * vb * vb / n));
  }
}

TEST(PredictTest, SeparableTwoPointProblemIsPerfect) {
  Network net;
  VariationalLayer layer;
  layer.phi = Matrix(2, 2, {5.0, -5.0, -5.0, 5.0});
  layer.zeta = Matrix(2, 2);
  layer.bias = Matrix(1, 2);
  net.layers.push_back(layer);

  const Matrix x(2, 2, {1.0, 0.0, 0.0, 1.0});
  const std::vector<int> pred = predict(net, x);
  EXPECT_EQ(pred, (std::vector<int>{0, 1}));
  EXPECT_EQ(predict(net, x), pred);
}

TEST(PredictTest, TiesBreakToLowestIndex) {
  Network net;
  VariationalLayer layer;
  layer.phi = Matrix(2, 3);
  layer.zeta = Matrix(2, 3);
  layer.bias = Matrix(1, 3);
  net.layers.push_back(layer);

  const Matrix x(1, 2, {0.4, 0.6});
  EXPECT_EQ(predict(net, x), (std::vector<int>{0}));
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  TempDir tmp;
  Rng rng(5);
  Network net = make_network({8, 6, 4}, rng, 0.02);
  const auto p = tmp.path() / "model.ckpt";
  save_checkpoint(net, p);
  Network back = load_checkpoint(p);

  ASSERT_EQ(back.layers.size(), net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& a = net.layers[l];
    const auto& b = back.layers[l];
    EXPECT_EQ(0, std::memcmp(a.phi.data().data(), b.phi.data().data(),
                             a.phi.size() * sizeof(double)));
    EXPECT_EQ(0, std::memcmp(a.zeta.data().data(), b.zeta.data().data(),
                             a.zeta.size() * sizeof(double)));
    EXPECT_EQ(0, std::memcmp(a.bias.data().data(), b.bias.data().data(),
                             a.bias.size() * sizeof(double)));
  }

  const auto p2 = tmp.path() / "model2.ckpt";
  save_checkpoint(back, p2);
  std::ifstream fa(p, std::ios::binary), fb(p2, std::ios::binary);
  std::vector<char> abytes((std::istreambuf_iterator<char>(fa)),
                           std::istreambuf_iterator<char>());
  std::vector<char> bbytes((std::istreambuf_iterator<char>(fb)),
                           std::istreambuf_iterator<char>());
  ASSERT_FALSE(abytes.empty());
  EXPECT_EQ(abytes, bbytes);
}

TEST(CheckpointTest, LoadErrors) {
  TempDir tmp;
  EXPECT_THROW(load_checkpoint(tmp.path() / "missing.ckpt"),
               std::runtime_error);

  const auto bad = tmp.path() / "bad.ckpt";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOTANETX";
  }
  EXPECT_THROW(load_checkpoint(bad), std::runtime_error);

  Rng rng(5);
  Network net = make_network({3, 2}, rng);
  const auto p = tmp.path() / "model.ckpt";
  save_checkpoint(net, p);
  std::ifstream in(p, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  bytes.resize(bytes.size() - 5);
  const auto trunc = tmp.path() / "trunc.ckpt";
  {
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_checkpoint(trunc), std::runtime_error);
}

}  // namespace
}  // namespace dpvd
