#pragma once

#include <cmath>
#include <string>

#include "dgvc/error.hpp"
#include "dgvc/params.hpp"

namespace dgvc {

enum class OptimizerKind { momentum_sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "momentum_sgd") return OptimizerKind::momentum_sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + s + "' (momentum_sgd, adam)");
}

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "momentum_sgd"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::momentum_sgd;
  double lr = 1e-3;
  double momentum = 0.5;  // first-moment decay for Adam
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers; `second` is only used by Adam.
template <class T>
struct Moments {
  ParamStore<T> first;
  ParamStore<T> second;
  long step = 0;

  static Moments zeros_like(const ParamStore<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
  friend bool operator==(const Moments&, const Moments&) = default;
};

/// Classical momentum: v' = momentum * v + g, p' = p - lr * v'.
template <class T>
void momentum_step(ParamStore<T>& params, const ParamStore<T>& grads, ParamStore<T>& velocity, double lr,
                   double momentum) {
  require<InvalidArgument>(params.count() == grads.count() && params.count() == velocity.count(),
                           "optimizer: parameter/gradient layout mismatch");
  const T m = static_cast<T>(momentum), a = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor<T>& p = params[i];
    Tensor<T>& v = velocity[i];
    const Tensor<T>& g = grads[i];
    require<ShapeError>(p.shape() == g.shape() && p.shape() == v.shape(), "optimizer: shape mismatch at " + params.name(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = m * v[k] + g[k];
      p[k] -= a * v[k];
    }
  }
}

template <class T>
void optimizer_step(ParamStore<T>& params, const ParamStore<T>& grads, Moments<T>& moments, const OptimizerConfig& cfg) {
  require<InvalidArgument>(cfg.lr >= 0.0 && cfg.momentum >= 0.0 && cfg.momentum < 1.0, "optimizer: bad hyperparameters");
  ++moments.step;
  if (cfg.kind == OptimizerKind::momentum_sgd) {
    momentum_step(params, grads, moments.first, cfg.lr, cfg.momentum);
    return;
  }
  const double b1 = cfg.momentum, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(moments.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(moments.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    Tensor<T>& p = params[i];
    Tensor<T>& m = moments.first[i];
    Tensor<T>& v = moments.second[i];
    const Tensor<T>& g = grads[i];
    require<ShapeError>(p.shape() == g.shape(), "optimizer: shape mismatch at " + params.name(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g[k]);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * g[k] * g[k]);
      p[k] -= static_cast<T>(cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps));
    }
  }
}

}  // namespace dgvc
