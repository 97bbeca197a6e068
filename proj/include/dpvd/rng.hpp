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

#ifndef DPVD_RNG_H_
#define DPVD_RNG_H_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "dpvd/matrix.hpp"

namespace dpvd {

// splitmix64 generator with Box-Muller normals. std::mt19937 and the standard
// distributions are implementation-defined across library versions; this one
// reproduces bit-for-bit from a seed. Not cryptographic: the noise here
// protects against privacy loss under the DP model, not against an adversary
// predicting the stream, and reproducibility is required by the test suite.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on (0, 1]. Never returns 0, so log() of a draw stays finite.
  double next_uniform() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the paired draw is cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // Derives an independently seeded stream, advancing this one by one draw.
  Rng split() { return Rng(next_u64()); }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// rows x cols matrix of N(mean, std^2) draws, filled row-major. std == 0
// produces exactly mean in every cell and consumes no draws.
inline Matrix gaussian_sample(Rng& rng, std::size_t rows, std::size_t cols,
                              double mean, double std) {
  if (std < 0.0) {
    throw std::invalid_argument("gaussian_sample: negative std");
  }
  if (std == 0.0) return Matrix::constant(rows, cols, mean);
  Matrix out(rows, cols);
  for (double& v : out.data()) v = mean + std * rng.next_gaussian();
  return out;
}

}  // namespace dpvd

#endif  // DPVD_RNG_H_
