#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/rng.hpp"
#include "dgvc/schedule.hpp"

namespace dgvc {

struct DiagCheck {
  std::string name;
  bool pass = false;
  double error = 0.0;      // observed deviation
  double tolerance = 0.0;  // allowed deviation
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DiagCheck, name, pass, error, tolerance)

struct DiagReport {
  std::vector<DiagCheck> checks;
  bool pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return !checks.empty();
  }
};

inline void to_json(nlohmann::json& j, const DiagReport& r) { j = {{"pass", r.pass()}, {"checks", r.checks}}; }

namespace detail {

inline DiagCheck band(std::string name, double error, double tol) { return {std::move(name), error <= tol, error, tol}; }

// Mean and variance of q(x_{t-1} | x_t, x_0) for scalars by brute-force
// integration of prior x likelihood on a grid.
inline std::pair<double, double> grid_posterior(const DiffusionSchedule& s, int t, double x0, double xt, int n = 200001) {
  const double m0 = std::sqrt(s.alpha_bar(t - 1)) * x0, v0 = s.one_minus_alpha_bar(t - 1);
  const double a = std::sqrt(s.alpha(t)), b = s.beta(t);
  const double lo = m0 - 12 * std::sqrt(v0), hi = m0 + 12 * std::sqrt(v0), h = (hi - lo) / (n - 1);
  std::vector<double> logw(n);
  double peak = -INFINITY;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    logw[i] = -0.5 * (x - m0) * (x - m0) / v0 - 0.5 * (xt - a * x) * (xt - a * x) / b;
    peak = std::max(peak, logw[i]);
  }
  double z = 0, m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h, w = std::exp(logw[i] - peak);
    z += w;
    m += w * x;
    m2 += w * x * x;
  }
  m /= z;
  return {m, m2 / z - m * m};
}

}  // namespace detail

/// Schedule invariants, Monte-Carlo marginal equivalence, grid-Bayes posterior
/// agreement and chain determinism for one schedule.
inline DiagReport run_diffusion_diag(const DiffusionSchedule& s, std::uint64_t seed, int n_draws = 100000) {
  DiagReport r;
  const int n = s.steps();
  double worst_mono = -INFINITY;
  for (int t = 1; t <= n; ++t) worst_mono = std::max(worst_mono, s.alpha_bar(t) - s.alpha_bar(t - 1));
  r.checks.push_back({"alpha_bar strictly decreasing", worst_mono < 0.0, worst_mono, 0.0});
  r.checks.push_back(detail::band("posterior variance at t=1 is zero", std::abs(s.posterior_var(1)), 0.0));
  r.checks.push_back({"terminal noise 1 - alpha_bar_T >= 0.99", s.one_minus_alpha_bar(n) >= 0.99,
                      0.99 - s.one_minus_alpha_bar(n), 0.0});

  // Iterated single steps against the closed-form marginal, scalar x0 = 1.
  Rng rng = Rng::stream(seed, "diag");
  for (int t = 1; t <= n; ++t) {
    double sum = 0, sum2 = 0;
    for (int k = 0; k < n_draws; ++k) {
      double x = 1.0;
      for (int u = 1; u <= t; ++u) x = std::sqrt(1.0 - s.beta(u)) * x + std::sqrt(s.beta(u)) * rng.normal();
      sum += x;
      sum2 += x * x;
    }
    const double mean = sum / n_draws, var = sum2 / n_draws - mean * mean;
    const double want_mean = std::sqrt(s.alpha_bar(t)), want_var = s.one_minus_alpha_bar(t);
    const std::string tag = " t=" + std::to_string(t);
    r.checks.push_back(detail::band("marginal mean" + tag, std::abs(mean - want_mean), 3.0 * std::sqrt(want_var / n_draws)));
    r.checks.push_back(
        detail::band("marginal variance" + tag, std::abs(var - want_var), 3.0 * want_var * std::sqrt(2.0 / (n_draws - 1))));
  }

  // Closed-form posterior against brute-force Bayes.
  const double x0 = 0.7, xt = -0.4;
  for (int t = 1; t <= n; ++t) {
    const std::string tag = " t=" + std::to_string(t);
    const auto p = posterior_params(Tensor<double>({1}, {x0}), Tensor<double>({1}, {xt}), t, s);
    if (t == 1) {
      r.checks.push_back(detail::band("posterior collapses onto x0_hat" + tag,
                                      std::abs(p.mean[0] - x0) + p.var, 0.0));
      continue;
    }
    const auto [gm, gv] = detail::grid_posterior(s, t, x0, xt);
    r.checks.push_back(detail::band("posterior mean vs grid Bayes" + tag, std::abs(p.mean[0] - gm), 1e-3));
    r.checks.push_back(detail::band("posterior variance vs grid Bayes" + tag, std::abs(p.var - gv), 1e-3));
  }

  // Two seeded chains with the same fixed generator must agree bit for bit.
  auto chain = [&](Rng rg) {
    Tensor<double> x = rg.normal_tensor<double>({3, 8});
    auto gen = [](const Tensor<double>& xt, const Tensor<double>&, int t) {
      return map<double>(xt, [t](double v) { return std::tanh(v) / t; });
    };
    for (int t = n; t >= 1; --t) x = denoise_step(x, t, gen, rg.normal_tensor<double>({1, 2}), s, rg).x_prev;
    return x;
  };
  const bool same = chain(Rng::stream(seed, "chain")) == chain(Rng::stream(seed, "chain"));
  r.checks.push_back({"seeded denoising chain is bit-reproducible", same, same ? 0.0 : 1.0, 0.0});
  return r;
}

}  // namespace dgvc
