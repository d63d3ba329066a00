#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dgvc/error.hpp"
#include "dgvc/rng.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

/// Noise schedule of a T-step forward diffusion and the closed-form quantities
/// derived from it. Step indices are 1-based; alpha_bar(0) == 1. All arithmetic
/// is double precision whatever the model precision.
class DiffusionSchedule {
 public:
  static constexpr int kMaxSteps = 1000;
  static constexpr double kMinTerminalNoise = 0.99;

  /// Linearly spaced betas from beta_min (t = 1) to beta_max (t = T).
  static DiffusionSchedule linear(int steps, double beta_min, double beta_max) {
    require<InvalidArgument>(steps >= 1 && steps <= kMaxSteps,
                             "schedule steps must be in [1, 1000], got " + std::to_string(steps));
    require<InvalidArgument>(std::isfinite(beta_min) && std::isfinite(beta_max) && beta_min > 0.0 &&
                                 beta_min <= beta_max && beta_max <= 1.0,
                             "need 0 < beta_min <= beta_max <= 1");
    std::vector<double> betas(steps);
    for (int i = 0; i < steps; ++i)
      betas[i] = steps == 1 ? beta_max : beta_min + (beta_max - beta_min) * i / (steps - 1);
    return from_betas(std::move(betas));
  }

  static DiffusionSchedule from_betas(std::vector<double> betas) {
    require<InvalidArgument>(!betas.empty() && betas.size() <= kMaxSteps, "schedule needs 1..1000 betas");
    for (double b : betas)
      require<InvalidArgument>(std::isfinite(b) && b > 0.0 && b <= 1.0, "beta out of (0, 1]: " + std::to_string(b));
    DiffusionSchedule s(std::move(betas));
    require<InvalidArgument>(s.one_minus_alpha_bar(s.steps()) >= kMinTerminalNoise,
                             "schedule leaves too much signal at the last step: 1 - alpha_bar_T = " +
                                 std::to_string(s.one_minus_alpha_bar(s.steps())));
    return s;
  }

  /// Skips the terminal-noise check and admits beta = 0. Tests only.
  static DiffusionSchedule unchecked(std::vector<double> betas) {
    require<InvalidArgument>(!betas.empty(), "empty schedule");
    for (double b : betas) require<InvalidArgument>(std::isfinite(b) && b >= 0.0 && b <= 1.0, "beta out of [0, 1]");
    return DiffusionSchedule(std::move(betas));
  }

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  const std::vector<double>& betas() const noexcept { return betas_; }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[index(t)]; }
  /// 1 - alpha_bar(t), computed without cancellation for small betas.
  double one_minus_alpha_bar(int t) const { return t == 0 ? 0.0 : one_minus_ab_[index(t)]; }

  /// Variance of q(x_{t-1} | x_t, x_0); exactly zero at t = 1.
  double posterior_var(int t) const { return posterior_vars_[index(t)]; }

  /// Coefficients of the posterior mean, mean = c0 * x0 + ct * x_t.
  std::pair<double, double> posterior_coefs(int t) const {
    check_step(t);
    if (t == 1) return {1.0, 0.0};
    const double denom = one_minus_alpha_bar(t);
    if (!(denom > 1e-300)) throw NumericError("posterior undefined: 1 - alpha_bar_" + std::to_string(t) + " underflows");
    const double c0 = std::sqrt(alpha_bar(t - 1)) * beta(t) / denom;
    const double ct = std::sqrt(alpha(t)) * one_minus_alpha_bar(t - 1) / denom;
    return {c0, ct};
  }

  void check_step(int t) const {
    if (t < 1 || t > steps())
      throw InvalidArgument("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }

 private:
  explicit DiffusionSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    const int n = steps();
    alpha_bars_.resize(n);
    one_minus_ab_.resize(n);
    posterior_vars_.resize(n);
    double log_ab = 0.0;
    for (int i = 0; i < n; ++i) {
      log_ab += std::log1p(-betas_[i]);
      alpha_bars_[i] = std::exp(log_ab);
      one_minus_ab_[i] = -std::expm1(log_ab);
      if (betas_[i] == 1.0) {
        alpha_bars_[i] = 0.0;
        one_minus_ab_[i] = 1.0;
        log_ab = -INFINITY;
      }
    }
    for (int i = 0; i < n; ++i) {
      if (i == 0) {
        posterior_vars_[i] = 0.0;
      } else {
        const double denom = one_minus_ab_[i];
        posterior_vars_[i] = denom > 0.0 ? one_minus_ab_[i - 1] / denom * betas_[i] : 0.0;
      }
    }
  }

  std::size_t index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> one_minus_ab_;
  std::vector<double> posterior_vars_;
};

/// A diffused sample together with its noise level (t = 0 is clean data).
template <class T>
struct NoisySample {
  Tensor<T> x;
  int t = 0;
};

/// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps, with caller-supplied eps.
template <class T>
Tensor<T> forward_step(const Tensor<T>& x_prev, int t, const DiffusionSchedule& s, const Tensor<T>& eps) {
  require<ShapeError>(x_prev.shape() == eps.shape(), "forward_step: noise shape mismatch");
  const double a = std::sqrt(1.0 - s.beta(t)), b = std::sqrt(s.beta(t));
  Tensor<T> out(x_prev.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * x_prev[i] + b * eps[i]);
  return out;
}

template <class T>
Tensor<T> forward_step_sample(const Tensor<T>& x_prev, int t, const DiffusionSchedule& s, Rng& rng) {
  s.check_step(t);
  return forward_step(x_prev, t, s, rng.normal_tensor<T>(x_prev.shape()));
}

/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps, with caller-supplied eps.
template <class T>
Tensor<T> forward_marginal(const Tensor<T>& x0, int t, const DiffusionSchedule& s, const Tensor<T>& eps) {
  require<ShapeError>(x0.shape() == eps.shape(), "forward_marginal: noise shape mismatch");
  const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(s.one_minus_alpha_bar(t));
  s.check_step(t);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
  return out;
}

template <class T>
Tensor<T> forward_marginal_sample(const Tensor<T>& x0, int t, const DiffusionSchedule& s, Rng& rng) {
  s.check_step(t);
  return forward_marginal(x0, t, s, rng.normal_tensor<T>(x0.shape()));
}

template <class T>
struct Posterior {
  Tensor<T> mean;
  double var = 0.0;
};

template <class T>
Posterior<T> posterior_params(const Tensor<T>& x0_hat, const Tensor<T>& x_t, int t, const DiffusionSchedule& s) {
  require<ShapeError>(x0_hat.shape() == x_t.shape(), "posterior_params: shape mismatch");
  const auto [c0, ct] = s.posterior_coefs(t);
  Posterior<T> p{Tensor<T>(x_t.shape()), s.posterior_var(t)};
  for (std::size_t i = 0; i < x_t.size(); ++i) p.mean[i] = static_cast<T>(c0 * x0_hat[i] + ct * x_t[i]);
  return p;
}

/// Draw from the posterior with caller-supplied standard noise.
template <class T>
Tensor<T> posterior_sample(const Tensor<T>& x0_hat, const Tensor<T>& x_t, int t, const DiffusionSchedule& s,
                           const Tensor<T>& eps) {
  Posterior<T> p = posterior_params(x0_hat, x_t, t, s);
  if (t == 1) return p.mean;
  require<ShapeError>(eps.shape() == x_t.shape(), "posterior_sample: noise shape mismatch");
  const double sd = std::sqrt(p.var);
  for (std::size_t i = 0; i < p.mean.size(); ++i) p.mean[i] = static_cast<T>(p.mean[i] + sd * eps[i]);
  return p.mean;
}

template <class T>
struct DenoiseResult {
  Tensor<T> x_prev;
  Tensor<T> x0_hat;
};

/// One reverse step: predict the clean sample with `gen(x_t, z, t)` and
/// re-noise it through q(x_{t-1} | x_t, x0_hat). Deterministic at t = 1.
template <class T, class Gen>
DenoiseResult<T> denoise_step(const Tensor<T>& x_t, int t, Gen&& gen, const Tensor<T>& z, const DiffusionSchedule& s,
                              const Tensor<T>& eps) {
  s.check_step(t);
  Tensor<T> x0_hat = gen(x_t, z, t);
  require<ShapeError>(x0_hat.shape() == x_t.shape(), "generator changed the sample shape");
  if (!x0_hat.all_finite()) throw NumericError("generator produced non-finite x0 at step " + std::to_string(t));
  Tensor<T> prev = posterior_sample(x0_hat, x_t, t, s, eps);
  return {std::move(prev), std::move(x0_hat)};
}

template <class T, class Gen>
DenoiseResult<T> denoise_step(const Tensor<T>& x_t, int t, Gen&& gen, const Tensor<T>& z, const DiffusionSchedule& s,
                              Rng& rng) {
  s.check_step(t);
  Tensor<T> eps = t > 1 ? rng.normal_tensor<T>(x_t.shape()) : Tensor<T>(x_t.shape());
  return denoise_step(x_t, t, std::forward<Gen>(gen), z, s, eps);
}

/// Gaussian reverse step of a plain DDPM with fixed variance posterior_var(t):
/// mu(x_t, t) + sigma_t eps. Used as a baseline.
template <class T, class Mu>
Tensor<T> gaussian_reverse_step(const Tensor<T>& x_t, int t, Mu&& mu_predictor, const DiffusionSchedule& s, Rng& rng) {
  s.check_step(t);
  Tensor<T> mu = mu_predictor(x_t, t);
  require<ShapeError>(mu.shape() == x_t.shape(), "mean predictor changed the sample shape");
  const double sd = std::sqrt(s.posterior_var(t));
  if (sd == 0.0) return mu;
  for (auto& v : mu.values()) v = static_cast<T>(v + sd * rng.normal());
  return mu;
}

}  // namespace dgvc
