#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dgvc/schedule.hpp"

using namespace dgvc;

namespace {

struct Moments {
  double mean = 0, var = 0;
};

Moments moments(const std::vector<double>& v) {
  double s = 0, s2 = 0;
  for (double x : v) s += x;
  const double m = s / v.size();
  for (double x : v) s2 += (x - m) * (x - m);
  return {m, s2 / v.size()};
}

// Within 3 standard errors of a normal population with the given moments.
void expect_normal_moments(const std::vector<double>& v, double mean, double var) {
  const double n = static_cast<double>(v.size());
  const Moments m = moments(v);
  EXPECT_LT(std::abs(m.mean - mean), 3 * std::sqrt(var / n)) << "mean";
  EXPECT_LT(std::abs(m.var - var), 3 * var * std::sqrt(2.0 / n)) << "variance";
}

// Posterior of x_{t-1} given (x_t, x_0) by brute force on a grid:
// N(x_{t-1}; sqrt(ab_{t-1}) x0, 1 - ab_{t-1}) * N(x_t; sqrt(1 - b_t) x_{t-1}, b_t).
Moments grid_posterior(const std::vector<double>& betas, int t, double x0, double xt) {
  double ab_prev = 1;
  for (int s = 0; s < t - 1; ++s) ab_prev *= 1 - betas[s];
  const double bt = betas[t - 1];
  const double prior_mean = std::sqrt(ab_prev) * x0, prior_var = 1 - ab_prev;
  const int n = 400001;
  const double lo = -15, hi = 15, dx = (hi - lo) / (n - 1);
  double w_sum = 0, m1 = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * dx;
    const double lp = -0.5 * (x - prior_mean) * (x - prior_mean) / prior_var -
                      0.5 * (xt - std::sqrt(1 - bt) * x) * (xt - std::sqrt(1 - bt) * x) / bt;
    const double w = std::exp(lp);
    w_sum += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  const double mean = m1 / w_sum;
  return {mean, m2 / w_sum - mean * mean};
}

}  // namespace

TEST(Schedule, CumulativeProductsMatchHandValues) {
  const auto s = DiffusionSchedule::from_betas({0.3, 0.6, 0.9, 0.99});
  const double expected[] = {0.7, 0.28, 0.028, 0.00028};
  for (int t = 1; t <= 4; ++t) EXPECT_NEAR(s.alpha_bar(t), expected[t - 1], 1e-15);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, DefaultLinearScheduleInvariants) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  const double betas[] = {0.1, 0.1 + 0.85 / 3, 0.1 + 1.7 / 3, 0.95};
  double ab = 1;
  for (int t = 1; t <= 4; ++t) {
    EXPECT_NEAR(s.beta(t), betas[t - 1], 1e-15);
    ab *= 1 - betas[t - 1];
    EXPECT_NEAR(s.alpha_bar(t), ab, 1e-15);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.alpha_bar(t), 0.0);
  }
  EXPECT_EQ(s.posterior_var(1), 0.0);
  EXPECT_GE(s.one_minus_alpha_bar(4), 0.99);
}

TEST(Schedule, SingleFullNoiseStep) {
  const auto s = DiffusionSchedule::from_betas({1.0});
  EXPECT_EQ(s.alpha_bar(1), 0.0);
  Rng rng(1);
  const Tensor<double> x0({4}, 7.0);
  const Tensor<double> eps = Rng(2).normal_tensor<double>({4});
  EXPECT_EQ(forward_marginal(x0, 1, s, eps), eps);
}

TEST(Schedule, RejectsBadConstruction) {
  EXPECT_THROW(DiffusionSchedule::linear(0, 0.1, 0.9), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::linear(1001, 0.1, 0.9), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::linear(4, 0.5, 0.1), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::from_betas({0.5, NAN}), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::from_betas({1.5}), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::from_betas({}), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::linear(4, 0.01, 0.02), InvalidArgument);  // too much signal left
}

TEST(Schedule, TinyBetaCollapsesOntoData) {
  const auto s = DiffusionSchedule::unchecked({1e-12});
  EXPECT_NEAR(s.alpha_bar(1), 1.0, 1e-12);
  EXPECT_NEAR(s.one_minus_alpha_bar(1), 1e-12, 1e-24);
  const Tensor<double> x0({3}, {1.0, -2.0, 0.5});
  const Tensor<double> x1 = forward_marginal(x0, 1, s, Rng(3).normal_tensor<double>({3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x1[i], x0[i], 1e-5);
}

TEST(Schedule, ForwardStepEdgeCases) {
  const auto zero = DiffusionSchedule::unchecked({0.0});
  const Tensor<double> x({3}, {1.0, 2.0, -3.0});
  Rng rng(4);
  EXPECT_EQ(forward_step_sample(x, 1, zero, rng), x);

  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  const Tensor<double> y = forward_step(x, 2, s, Tensor<double>({3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y[i], std::sqrt(1 - (0.1 + 0.85 / 3)) * x[i]);
  const Tensor<double> m = forward_marginal(x, 3, s, Tensor<double>({3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(m[i], std::sqrt(s.alpha_bar(3)) * x[i]);
  EXPECT_THROW(forward_step_sample(x, 0, s, rng), InvalidArgument);
  EXPECT_THROW(forward_marginal_sample(x, 5, s, rng), InvalidArgument);
}

TEST(Schedule, ForwardStepMomentsOverManyDraws) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  Rng rng(5);
  const int n = 100000;
  const Tensor<double> x({1}, {1.3});
  for (int t = 1; t <= 4; ++t) {
    std::vector<double> v(n);
    for (auto& o : v) o = forward_step_sample(x, t, s, rng)[0];
    expect_normal_moments(v, std::sqrt(1 - s.beta(t)) * 1.3, s.beta(t));
  }
}

TEST(Schedule, IteratedStepsMatchClosedFormMarginal) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  Rng rng(6);
  const int n = 100000;
  const Tensor<double> x0({2}, {0.8, -1.7});
  for (int t = 1; t <= 4; ++t) {
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      Tensor<double> x = x0;
      for (int k = 1; k <= t; ++k) x = forward_step_sample(x, k, s, rng);
      a[i] = x[1];
      b[i] = forward_marginal_sample(x0, t, s, rng)[1];
    }
    const double mean = std::sqrt(s.alpha_bar(t)) * -1.7, var = s.one_minus_alpha_bar(t);
    expect_normal_moments(a, mean, var);
    expect_normal_moments(b, mean, var);
  }
}

TEST(Schedule, TerminalSampleDecorrelatesFromData) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  Rng rng(7);
  const int n = 10000;
  std::vector<double> xs(n), ys(n);
  for (int i = 0; i < n; ++i) {
    const Tensor<double> x0({1}, {rng.normal()});
    xs[i] = x0[0];
    ys[i] = forward_marginal_sample(x0, 4, s, rng)[0];
  }
  const Moments mx = moments(xs), my = moments(ys);
  double cov = 0;
  for (int i = 0; i < n; ++i) cov += (xs[i] - mx.mean) * (ys[i] - my.mean);
  cov /= n;
  EXPECT_LT(std::abs(cov / std::sqrt(mx.var * my.var)), 0.1);
}

TEST(Schedule, PosteriorCollapsesAtFirstStep) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  const Tensor<double> x0({3}, {1.0, 2.0, 3.0}), xt({3}, {-5.0, 0.0, 9.0});
  const auto p = posterior_params(x0, xt, 1, s);
  EXPECT_EQ(p.var, 0.0);
  EXPECT_EQ(p.mean, x0);
  EXPECT_THROW(posterior_params(x0, xt, 0, s), InvalidArgument);
  EXPECT_THROW(posterior_params(x0, Tensor<double>({2}), 2, s), ShapeError);
}

TEST(Schedule, PosteriorMatchesGridBayes) {
  const std::vector<std::vector<double>> schedules = {
      {0.5, 0.99}, DiffusionSchedule::linear(4, 0.1, 0.95).betas(), {0.3, 0.6, 0.9, 0.99}};
  const double cases[][2] = {{0.7, -0.4}, {-1.5, 2.0}, {0.0, 0.3}};
  for (const auto& betas : schedules) {
    const auto s = DiffusionSchedule::from_betas(betas);
    for (int t = 2; t <= s.steps(); ++t)
      for (const auto& c : cases) {
        const auto p = posterior_params(Tensor<double>({1}, {c[0]}), Tensor<double>({1}, {c[1]}), t, s);
        const Moments grid = grid_posterior(betas, t, c[0], c[1]);
        EXPECT_NEAR(p.mean[0], grid.mean, 1e-3) << "t=" << t;
        EXPECT_NEAR(p.var, grid.var, 1e-3) << "t=" << t;
      }
  }
}

TEST(Schedule, PosteriorMeanIsFixedWhenCoefficientsSumToOne) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  for (int t = 1; t <= 4; ++t) {
    const auto [c0, ct] = s.posterior_coefs(t);
    // x0_hat = x_t is a fixed point exactly when c0 + ct = 1.
    const Tensor<double> x({2}, {0.9, -0.2});
    const auto p = posterior_params(x, x, t, s);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p.mean[i], (c0 + ct) * x[i], 1e-15);
  }
  const auto s1 = DiffusionSchedule::from_betas({1.0});
  const auto [c0, ct] = s1.posterior_coefs(1);
  EXPECT_EQ(c0 + ct, 1.0);
  const Tensor<double> x({2}, {0.9, -0.2});
  EXPECT_EQ(posterior_params(x, x, 1, s1).mean, x);
}

TEST(Schedule, PosteriorGuardsUnderflow) {
  const auto s = DiffusionSchedule::unchecked({0.0, 0.0});
  EXPECT_THROW(s.posterior_coefs(2), NumericError);
}

TEST(Schedule, DenoiseStepExamples) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  Rng rng(8);
  const Tensor<double> x = rng.normal_tensor<double>({3, 4}), z({2});
  auto identity = [](const Tensor<double>& xt, const Tensor<double>&, int) { return xt; };
  EXPECT_EQ(denoise_step(x, 1, identity, z, s, rng).x_prev, x);

  auto zero = [](const Tensor<double>& xt, const Tensor<double>&, int) { return Tensor<double>(xt.shape()); };
  const auto r = denoise_step(x, 3, zero, z, s, Tensor<double>(x.shape()));
  const double ct = std::sqrt(s.alpha(3)) * s.one_minus_alpha_bar(2) / s.one_minus_alpha_bar(3);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r.x_prev[i], ct * x[i], 1e-15);

  auto bad = [](const Tensor<double>& xt, const Tensor<double>&, int) { return Tensor<double>(xt.shape(), NAN); };
  EXPECT_THROW(denoise_step(x, 2, bad, z, s, rng), NumericError);
  auto wrong = [](const Tensor<double>&, const Tensor<double>&, int) { return Tensor<double>({1}); };
  EXPECT_THROW(denoise_step(x, 2, wrong, z, s, rng), ShapeError);
}

TEST(Schedule, ChainWithOracleGeneratorEndsOnTarget) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  Rng rng(9);
  const Tensor<double> target = rng.normal_tensor<double>({2, 5});
  auto oracle = [&](const Tensor<double>&, const Tensor<double>&, int) { return target; };
  Tensor<double> x = rng.normal_tensor<double>({2, 5});
  for (int t = 4; t >= 1; --t) x = denoise_step(x, t, oracle, rng.normal_tensor<double>({3}), s, rng).x_prev;
  EXPECT_EQ(x, target);
}

TEST(Schedule, ChainIsBitReproducible) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  auto gen = [](const Tensor<double>& xt, const Tensor<double>& z, int t) {
    Tensor<double> o = xt;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(o[i] * 0.5 + z[i % z.size()] / t);
    return o;
  };
  auto run = [&] {
    Rng rng(10);
    Tensor<double> x = rng.normal_tensor<double>({4, 4});
    for (int t = 4; t >= 1; --t) x = denoise_step(x, t, gen, rng.normal_tensor<double>({2}), s, rng).x_prev;
    return x;
  };
  EXPECT_EQ(run(), run());
}

TEST(Schedule, GaussianReverseStepMoments) {
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  Rng rng(11);
  const Tensor<double> x({1}, {0.4});
  auto zero = [](const Tensor<double>& xt, int) { return Tensor<double>(xt.shape()); };
  auto mu = [](const Tensor<double>& xt, int) { return Tensor<double>(xt.shape(), 2.5); };
  EXPECT_EQ(gaussian_reverse_step(x, 1, mu, s, rng)[0], 2.5);
  for (int t = 2; t <= 4; ++t) {
    std::vector<double> v(100000);
    for (auto& o : v) o = gaussian_reverse_step(x, t, zero, s, rng)[0];
    expect_normal_moments(v, 0.0, s.posterior_var(t));
  }
  EXPECT_THROW(gaussian_reverse_step(x, 5, zero, s, rng), InvalidArgument);
}

TEST(Schedule, GaussianStepAgreesWithDenoiseStepOnGaussianData) {
  // For x0 ~ N(m, 0) the Bayes-optimal x0 predictor is the constant m; both
  // samplers then draw from the same posterior N(c0 m + ct x_t, var).
  const auto s = DiffusionSchedule::linear(4, 0.1, 0.95);
  const double m = 1.2, xt = -0.3;
  const int n = 100000;
  for (int t = 2; t <= 4; ++t) {
    const auto [c0, ct] = s.posterior_coefs(t);
    auto g = [&](const Tensor<double>& x, const Tensor<double>&, int) { return Tensor<double>(x.shape(), m); };
    auto mu = [&](const Tensor<double>& x, int) { return Tensor<double>(x.shape(), c0 * m + ct * x[0]); };
    Rng ra(12), rb(13);
    std::vector<double> a(n), b(n);
    const Tensor<double> x({1}, {xt}), z({1});
    for (int i = 0; i < n; ++i) {
      a[i] = denoise_step(x, t, g, z, s, ra).x_prev[0];
      b[i] = gaussian_reverse_step(x, t, mu, s, rb)[0];
    }
    expect_normal_moments(a, c0 * m + ct * xt, s.posterior_var(t));
    expect_normal_moments(b, c0 * m + ct * xt, s.posterior_var(t));
  }
}
