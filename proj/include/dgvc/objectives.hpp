#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dgvc/autograd.hpp"
#include "dgvc/error.hpp"
#include "dgvc/params.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEps = 1e-7;

struct LossWeights {
  double cycle = 10.0;
  double identity = 5.0;
};

/// Per-direction losses of one training step.
struct LossReport {
  double d_loss_real = 0.0;
  double d_loss_fake = 0.0;
  double g_adv = 0.0;
  double g_cyc = 0.0;
  double g_id = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;
  int t_sampled = 0;

  bool finite() const {
    for (double v : {d_loss_real, d_loss_fake, g_adv, g_cyc, g_id, total_g, total_d})
      if (!std::isfinite(v)) return false;
    return true;
  }
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

namespace loss {

/// mean(-log p)
template <class T>
Var neg_log(Graph<T>& g, Var p) {
  return op::affine(g, op::mean(g, op::log_clamped(g, p, T(kProbEps), T(1.0 - kProbEps))), T(-1));
}

/// mean(-log(1 - p))
template <class T>
Var neg_log1m(Graph<T>& g, Var p) {
  return neg_log(g, op::affine(g, p, T(-1), T(1)));
}

/// Discriminator objective on one real and one fake patch grid.
template <class T>
Var discriminator(Graph<T>& g, Var p_real, Var p_fake) {
  return op::add(g, neg_log(g, p_real), neg_log1m(g, p_fake));
}

/// Non-saturating generator objective, -log D(fake).
template <class T>
Var generator_adv(Graph<T>& g, Var p_fake) {
  return neg_log(g, p_fake);
}

/// Mean absolute difference.
template <class T>
Var l1(Graph<T>& g, Var a, Var b) {
  return op::mean(g, op::abs(g, op::sub(g, a, b)));
}

}  // namespace loss

/// Consecutive pair (x_{t-1}, x_t) seen by the discriminator.
template <class T>
struct StepPair {
  Tensor<T> x_prev;
  Tensor<T> x_t;
};

template <class T>
struct ParamLoss {
  double value = 0.0;
  ParamStore<T> grads;  // w.r.t. discriminator parameters
};

template <class T>
struct InputLoss {
  double value = 0.0;
  std::vector<Tensor<T>> grads;  // w.r.t. the x_{t-1} entry of each fake pair
};

namespace detail {
inline void check_value(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}
}  // namespace detail

/// Discriminator loss averaged over patches and over the batch, with its
/// gradient w.r.t. the discriminator parameters.
template <class T, class Disc>
ParamLoss<T> d_loss(const Disc& disc, const ParamStore<T>& params, const std::vector<StepPair<T>>& real,
                    const std::vector<StepPair<T>>& fake, int t) {
  require<InvalidArgument>(!real.empty() && real.size() == fake.size(), "d_loss: batches must be equal and non-empty");
  ParamLoss<T> out{0.0, params.zeros_like()};
  const T w = T(1) / static_cast<T>(real.size());
  for (std::size_t i = 0; i < real.size(); ++i) {
    require<ShapeError>(real[i].x_prev.shape() == real[i].x_t.shape() && fake[i].x_prev.shape() == fake[i].x_t.shape() &&
                            real[i].x_t.shape() == fake[i].x_t.shape(),
                        "d_loss: pair shapes differ");
    Graph<T> g;
    Bound<T> p = bind(g, params, true);
    Var pr = disc.forward(g, p, g.input(real[i].x_prev), g.input(real[i].x_t), t);
    Var pf = disc.forward(g, p, g.input(fake[i].x_prev), g.input(fake[i].x_t), t);
    Var l = loss::discriminator(g, pr, pf);
    detail::check_value(g.value(l)[0], "discriminator loss");
    g.backward(l);
    accumulate_grads(g, p, out.grads, w);
    out.value += static_cast<double>(g.value(l)[0]) / static_cast<double>(real.size());
  }
  return out;
}

/// Generator adversarial loss and its gradient w.r.t. each fake x_{t-1}.
template <class T, class Disc>
InputLoss<T> g_adv_loss(const Disc& disc, const ParamStore<T>& params, const std::vector<StepPair<T>>& fake, int t) {
  require<InvalidArgument>(!fake.empty(), "g_adv_loss: empty batch");
  InputLoss<T> out;
  for (const auto& pair : fake) {
    Graph<T> g;
    Bound<T> p = bind(g, params, false);
    Var xp = g.param(pair.x_prev);
    Var l = loss::generator_adv(g, disc.forward(g, p, xp, g.input(pair.x_t), t));
    detail::check_value(g.value(l)[0], "generator adversarial loss");
    g.backward(l);
    Tensor<T> gr = g.grad(xp);
    for (auto& v : gr.values()) v /= static_cast<T>(fake.size());
    out.grads.push_back(std::move(gr));
    out.value += static_cast<double>(g.value(l)[0]) / static_cast<double>(fake.size());
  }
  return out;
}

/// Mean absolute difference between two same-shaped tensors.
template <class T>
double l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  require<ShapeError>(a.shape() == b.shape(), "l1: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  require<ShapeError>(a.size() > 0, "l1: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s / static_cast<double>(a.size());
}

/// Round-trip reconstruction error |x - G_YX(G_XY(x))|.
template <class T>
double cycle_loss(const Tensor<T>& x, const Tensor<T>& x_cyc) {
  return l1_distance(x, x_cyc);
}

/// Error of the target-direction generator on a target-domain sample.
template <class T>
double identity_loss(const Tensor<T>& y, const Tensor<T>& g_xy_on_y) {
  return l1_distance(y, g_xy_on_y);
}

}  // namespace dgvc
