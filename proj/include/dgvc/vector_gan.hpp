#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dgvc/autograd.hpp"
#include "dgvc/error.hpp"
#include "dgvc/nets.hpp"
#include "dgvc/objectives.hpp"
#include "dgvc/optim.hpp"
#include "dgvc/params.hpp"
#include "dgvc/rng.hpp"
#include "dgvc/schedule.hpp"

namespace dgvc {

struct VectorGanConfig {
  MlpGeneratorSpec generator;
  MlpDiscriminatorSpec discriminator;
  std::vector<double> betas{0.1, 0.3833333333333333, 0.6666666666666666, 0.95};
  int iterations = 3000;
  int batch_size = 64;
  OptimizerConfig opt_g{OptimizerKind::adam, 1e-3, 0.5};
  OptimizerConfig opt_d{OptimizerKind::adam, 1e-3, 0.5};
  std::uint64_t seed = 1;
};

/// Diffusion-GAN over plain vectors: the generator predicts x0 from
/// (x_t, z, t) and x_{t-1} is drawn from the posterior; the discriminator
/// judges (x_{t-1}, x_t, t). Each row of a batch draws its own t.
class VectorDiffusionGan {
 public:
  explicit VectorDiffusionGan(VectorGanConfig cfg)
      : cfg_(std::move(cfg)),
        sched_(DiffusionSchedule::unchecked(cfg_.betas)),
        gen_(cfg_.generator),
        disc_(cfg_.discriminator),
        rng_(Rng::stream(cfg_.seed, "vector-gan")) {
    require<InvalidArgument>(cfg_.generator.data_dim == cfg_.discriminator.data_dim, "vector gan: data_dim mismatch");
    DiffusionSchedule::from_betas(cfg_.betas);  // enforce the terminal-noise rule
    Rng init = Rng::stream(cfg_.seed, "init");
    g_ = gen_.init(init);
    d_ = disc_.init(init);
    mg_ = Moments<float>::zeros_like(g_);
    md_ = Moments<float>::zeros_like(d_);
  }

  const DiffusionSchedule& schedule() const noexcept { return sched_; }

  /// One discriminator update followed by one generator update on x0 [N, F].
  LossReport step(const Tensor<float>& x0) {
    const int n = x0.dim(0), f = x0.dim(1), T = sched_.steps();
    require<ShapeError>(f == cfg_.generator.data_dim, "vector gan: batch width mismatch");
    std::vector<int> steps(n);
    for (int& t : steps) t = rng_.uniform_int(1, T);
    Tensor<float> x_prev({n, f}), x_t({n, f}), c0({n, f}), rest({n, f});
    for (int i = 0; i < n; ++i) {
      const int t = steps[i];
      for (int k = 0; k < f; ++k) {
        const double x = x0(i, k);
        const double xp = t > 1 ? std::sqrt(sched_.alpha_bar(t - 1)) * x + std::sqrt(sched_.one_minus_alpha_bar(t - 1)) * rng_.normal() : x;
        x_prev(i, k) = static_cast<float>(xp);
        x_t(i, k) = static_cast<float>(std::sqrt(sched_.alpha(t)) * xp + std::sqrt(sched_.beta(t)) * rng_.normal());
      }
    }
    const Tensor<float> z = rng_.normal_tensor<float>({n, cfg_.generator.latent_dim});
    for (int i = 0; i < n; ++i) {
      const auto [a, b] = sched_.posterior_coefs(steps[i]);
      const double sd = std::sqrt(sched_.posterior_var(steps[i]));
      for (int k = 0; k < f; ++k) {
        c0(i, k) = static_cast<float>(a);
        rest(i, k) = static_cast<float>(b * x_t(i, k) + sd * rng_.normal());
      }
    }
    LossReport rep;
    rep.t_sampled = steps[0];
    {
      const Tensor<float> x0_hat = gen_(g_, x_t, z, steps);
      Tensor<float> fake({n, f});
      for (std::size_t e = 0; e < fake.size(); ++e) fake[e] = c0[e] * x0_hat[e] + rest[e];
      Graph<float> g;
      Bound<float> p = bind(g, d_, true);
      Var lr = loss::neg_log(g, disc_.forward(g, p, g.input(x_prev), g.input(x_t), steps));
      Var lf = loss::neg_log1m(g, disc_.forward(g, p, g.input(fake), g.input(x_t), steps));
      g.backward(op::add(g, lr, lf));
      ParamStore<float> grads = d_.zeros_like();
      accumulate_grads(g, p, grads);
      optimizer_step(d_, grads, md_, cfg_.opt_d);
      rep.d_loss_real = g.value(lr)[0];
      rep.d_loss_fake = g.value(lf)[0];
      rep.total_d = rep.d_loss_real + rep.d_loss_fake;
    }
    {
      Graph<float> g;
      Bound<float> pg = bind(g, g_, true);
      Bound<float> pd = bind(g, d_, false);
      Var xt = g.input(x_t);
      Var x0_hat = gen_.forward(g, pg, xt, g.input(z), steps);
      Var fake = op::add(g, op::mul(g, g.input(c0), x0_hat), g.input(rest));
      Var l = loss::generator_adv(g, disc_.forward(g, pd, fake, xt, steps));
      g.backward(l);
      ParamStore<float> grads = g_.zeros_like();
      accumulate_grads(g, pg, grads);
      optimizer_step(g_, grads, mg_, cfg_.opt_g);
      rep.g_adv = rep.total_g = g.value(l)[0];
    }
    if (!rep.finite()) throw NumericError("vector gan: non-finite loss");
    return rep;
  }

  /// Runs cfg.iterations steps; `data(n, rng)` returns an [n, F] batch.
  void train(const std::function<Tensor<float>(int, Rng&)>& data) {
    Rng data_rng = Rng::stream(cfg_.seed, "data");
    for (int it = 0; it < cfg_.iterations; ++it) step(data(cfg_.batch_size, data_rng));
  }

  /// Full reverse chain from standard noise; returns [n, F].
  Tensor<float> sample(int n, Rng& rng) const {
    const int f = cfg_.generator.data_dim;
    Tensor<float> x = rng.normal_tensor<float>({n, f});
    for (int t = sched_.steps(); t >= 1; --t) {
      const std::vector<int> steps(n, t);
      const Tensor<float> z = rng.normal_tensor<float>({n, cfg_.generator.latent_dim});
      const Tensor<float> x0_hat = gen_(g_, x, z, steps);
      x = posterior_sample(x0_hat, x, t, sched_, rng.normal_tensor<float>({n, f}));
    }
    return x;
  }

 private:
  VectorGanConfig cfg_;
  DiffusionSchedule sched_;
  MlpGenerator<float> gen_;
  MlpDiscriminator<float> disc_;
  Rng rng_;
  ParamStore<float> g_, d_;
  Moments<float> mg_, md_;
};

}  // namespace dgvc
