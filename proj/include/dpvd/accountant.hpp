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

#ifndef DPVD_ACCOUNTANT_H_
#define DPVD_ACCOUNTANT_H_

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpvd {

enum class AccountingMethod { kAdvancedComposition, kZcdp };

inline const char* accounting_method_name(AccountingMethod m) {
  return m == AccountingMethod::kAdvancedComposition ? "ac" : "zcdp";
}

// Thrown when a privacy budget cannot be met: no feasible noise level, or a
// training step that would overspend epsilon_total.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PrivacyParams {
  double epsilon_total = 0.0;
  double delta_total = 0.0;
  double clip_c = 0.0;
  double sampling_nu = 0.0;
  std::size_t iterations_t = 0;
  AccountingMethod method = AccountingMethod::kZcdp;

  void validate() const {
    if (!(epsilon_total > 0.0)) {
      throw std::invalid_argument("PrivacyParams: epsilon_total must be > 0");
    }
    if (!(delta_total > 0.0 && delta_total < 1.0)) {
      throw std::invalid_argument("PrivacyParams: delta_total must be in (0,1)");
    }
    if (!(clip_c > 0.0)) {
      throw std::invalid_argument("PrivacyParams: clip_c must be > 0");
    }
    if (!(sampling_nu > 0.0 && sampling_nu <= 1.0)) {
      throw std::invalid_argument("PrivacyParams: sampling_nu must be in (0,1]");
    }
    if (iterations_t == 0) {
      throw std::invalid_argument("PrivacyParams: iterations_t must be >= 1");
    }
  }
};

// Classical Gaussian-mechanism calibration, valid for eps0 <= 1. Returns the
// absolute noise std for one release of the given sensitivity.
inline double gaussian_sigma_for(double eps0, double delta0,
                                 double sensitivity) {
  if (!(eps0 > 0.0 && eps0 <= 1.0)) {
    throw std::invalid_argument("gaussian_sigma_for: eps0 must be in (0,1]");
  }
  if (!(delta0 > 0.0 && delta0 < 1.0)) {
    throw std::invalid_argument("gaussian_sigma_for: delta0 must be in (0,1)");
  }
  if (!(sensitivity > 0.0)) {
    throw std::invalid_argument("gaussian_sigma_for: sensitivity must be > 0");
  }
  return sensitivity * std::sqrt(2.0 * std::log(1.25 / delta0)) / eps0;
}

// rho of one Gaussian release with absolute noise std sigma.
inline double zcdp_of_gaussian(double sigma, double sensitivity) {
  if (!(sigma > 0.0)) {
    throw std::invalid_argument("zcdp_of_gaussian: sigma must be > 0");
  }
  if (!(sensitivity > 0.0)) {
    throw std::invalid_argument("zcdp_of_gaussian: sensitivity must be > 0");
  }
  return sensitivity * sensitivity / (2.0 * sigma * sigma);
}

// Per-step rho of a subsampled Gaussian release at sampling fraction nu;
// sigma_rel is the noise std divided by the sensitivity.
inline double zcdp_step_subsampled(double sigma_rel, double nu) {
  if (!(sigma_rel > 0.0)) {
    throw std::invalid_argument("zcdp_step_subsampled: sigma_rel must be > 0");
  }
  if (!(nu > 0.0 && nu <= 1.0)) {
    throw std::invalid_argument("zcdp_step_subsampled: nu must be in (0,1]");
  }
  return nu * nu / (2.0 * sigma_rel * sigma_rel);
}

inline double zcdp_compose(const std::vector<double>& rhos) {
  double total = 0.0;
  for (double r : rhos) {
    if (r < 0.0) {
      throw std::invalid_argument("zcdp_compose: negative rho");
    }
    total += r;
  }
  return total;
}

inline double zcdp_to_dp(double rho, double delta) {
  if (!(rho >= 0.0)) {
    throw std::invalid_argument("zcdp_to_dp: rho must be >= 0");
  }
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("zcdp_to_dp: delta must be in (0,1)");
  }
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta));
}

struct AmplifiedDp {
  double epsilon = 0.0;
  double delta = 0.0;
};

// Subsampling amplification of one (eps0, delta0) release at fraction nu.
inline AmplifiedDp amplify_subsample(double eps0, double delta0, double nu) {
  if (!(eps0 > 0.0)) {
    throw std::invalid_argument("amplify_subsample: eps0 must be > 0");
  }
  if (!(delta0 >= 0.0 && delta0 < 1.0)) {
    throw std::invalid_argument("amplify_subsample: delta0 must be in [0,1)");
  }
  if (!(nu > 0.0 && nu <= 1.0)) {
    throw std::invalid_argument("amplify_subsample: nu must be in (0,1]");
  }
  return {std::log1p(nu * std::expm1(eps0)), nu * delta0};
}

// Advanced composition of t releases at eps_i each, with slack delta_slack.
inline double ac_total_epsilon(double eps_i, std::size_t t,
                               double delta_slack) {
  if (!(eps_i > 0.0)) {
    throw std::invalid_argument("ac_total_epsilon: eps_i must be > 0");
  }
  if (t < 1) {
    throw std::invalid_argument("ac_total_epsilon: t must be >= 1");
  }
  if (!(delta_slack > 0.0 && delta_slack < 1.0)) {
    throw std::invalid_argument("ac_total_epsilon: delta_slack must be in (0,1)");
  }
  const double td = static_cast<double>(t);
  return std::sqrt(2.0 * td * std::log(1.0 / delta_slack)) * eps_i +
         td * eps_i * std::expm1(eps_i);
}

namespace detail {

// eps0 of one Gaussian release at relative noise sigma_rel and failure mass
// delta0 (inverse of gaussian_sigma_for with unit sensitivity).
inline double gaussian_eps0(double sigma_rel, double delta0) {
  return std::sqrt(2.0 * std::log(1.25 / delta0)) / sigma_rel;
}

// Advanced-composition total over `steps` subsampled releases. delta0 is the
// per-release Gaussian failure mass fixed by the planned horizon; delta_slack
// is the composition slack. +inf when the configuration leaves the classical
// Gaussian validity regime (eps0 > 1) or delta0 is not a probability.
inline double ac_epsilon_for_sigma(double sigma_rel, double nu,
                                   std::size_t steps, double delta0,
                                   double delta_slack) {
  if (!(delta0 > 0.0 && delta0 < 1.0)) {
    return std::numeric_limits<double>::infinity();
  }
  const double eps0 = gaussian_eps0(sigma_rel, delta0);
  if (eps0 > 1.0) return std::numeric_limits<double>::infinity();
  const AmplifiedDp amp = amplify_subsample(eps0, delta0, nu);
  return ac_total_epsilon(amp.epsilon, steps, delta_slack);
}

}  // namespace detail

// Total converted epsilon of t subsampled Gaussian steps at relative noise
// sigma_rel. For AC, delta_total is split half to composition slack and half
// across the t amplified per-step deltas.
inline double total_epsilon_for_sigma(AccountingMethod method,
                                      double sigma_rel, double nu,
                                      std::size_t t, double delta_total) {
  if (t == 0) return 0.0;
  if (method == AccountingMethod::kZcdp) {
    const double rho =
        static_cast<double>(t) * zcdp_step_subsampled(sigma_rel, nu);
    return zcdp_to_dp(rho, delta_total);
  }
  const double delta0 = delta_total / (2.0 * static_cast<double>(t) * nu);
  return detail::ac_epsilon_for_sigma(sigma_rel, nu, t, delta0,
                                      delta_total / 2.0);
}

// Smallest relative noise std whose total converted epsilon fits the budget.
// Bisection over [1e-3, 1e6] to relative width 1e-6; the feasible set is an
// up-set in sigma because every total above is monotone decreasing in sigma.
inline double solve_sigma(const PrivacyParams& params) {
  params.validate();
  constexpr double kRelWidth = 1e-6;
  double lo = 1e-3;
  double hi = 1e6;
  const auto feasible = [&params](double s) {
    return total_epsilon_for_sigma(params.method, s, params.sampling_nu,
                                   params.iterations_t, params.delta_total) <=
           params.epsilon_total;
  };
  if (!feasible(hi)) {
    throw BudgetError("solve_sigma: no feasible noise level in [1e-3, 1e6]");
  }
  if (feasible(lo)) return lo;
  while (hi - lo > kRelWidth * hi) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

// Per-coordinate std of the noise injected into one update: the gradient sum
// has sensitivity 2C, so the release uses N(0, (2 C sigma)^2) per coordinate.
inline double noise_std_for_update(double sigma_rel, double clip_c) {
  if (!(sigma_rel > 0.0)) {
    throw std::invalid_argument("noise_std_for_update: sigma_rel must be > 0");
  }
  if (!(clip_c > 0.0)) {
    throw std::invalid_argument("noise_std_for_update: clip_c must be > 0");
  }
  return 2.0 * clip_c * sigma_rel;
}

// Single-owner running account of a training run's privacy spend. rho_spent
// is computed as steps * rho_step (not accumulated), so step-by-step
// composition equals the one-shot product exactly.
class BudgetLedger {
 public:
  BudgetLedger(const PrivacyParams& params, double sigma_rel)
      : params_(params), sigma_(sigma_rel) {
    params_.validate();
    if (!(sigma_rel > 0.0)) {
      throw std::invalid_argument("BudgetLedger: sigma must be > 0");
    }
    rho_step_ = zcdp_step_subsampled(sigma_, params_.sampling_nu);
    if (params_.method == AccountingMethod::kAdvancedComposition) {
      delta0_ = params_.delta_total /
                (2.0 * static_cast<double>(params_.iterations_t) *
                 params_.sampling_nu);
    }
  }

  // Records one step. Throws BudgetError if that step would push the
  // converted epsilon past epsilon_total.
  void advance() {
    const double next = epsilon_at(steps_taken_ + 1);
    if (next > params_.epsilon_total) {
      throw BudgetError("privacy budget exhausted: step " +
                        std::to_string(steps_taken_ + 1) + " would spend " +
                        std::to_string(next) + " of " +
                        std::to_string(params_.epsilon_total));
    }
    ++steps_taken_;
  }

  std::size_t steps_taken() const { return steps_taken_; }
  double sigma() const { return sigma_; }
  double rho_step() const { return rho_step_; }
  double rho_spent() const {
    return static_cast<double>(steps_taken_) * rho_step_;
  }
  double epsilon_spent() const {
    return steps_taken_ == 0 ? 0.0 : epsilon_at(steps_taken_);
  }
  const PrivacyParams& params() const { return params_; }

 private:
  double epsilon_at(std::size_t steps) const {
    if (params_.method == AccountingMethod::kZcdp) {
      return zcdp_to_dp(static_cast<double>(steps) * rho_step_,
                        params_.delta_total);
    }
    // delta0_ stays fixed by the planned horizon; only the composition
    // length grows with steps.
    return detail::ac_epsilon_for_sigma(sigma_, params_.sampling_nu, steps,
                                        delta0_, params_.delta_total / 2.0);
  }

  PrivacyParams params_;
  double sigma_ = 0.0;
  double rho_step_ = 0.0;
  double delta0_ = 0.0;
  std::size_t steps_taken_ = 0;
};

}  // namespace dpvd

#endif  // DPVD_ACCOUNTANT_H_
