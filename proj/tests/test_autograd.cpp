#include <gtest/gtest.h>

#include <functional>
#include <string>
#include <vector>

#include "dgvc/autograd.hpp"
#include "dgvc/rng.hpp"
#include "test_support.hpp"

using namespace dgvc;
using dgvc::testing::numeric_grad;
using dgvc::testing::rel_error;

namespace {

using Build = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

// Contracts the op output with fixed random weights and compares the tape
// gradient of every input with central differences.
void check_op(const std::string& name, std::vector<Tensor<double>> inputs, const Build& build, double tol = 1e-6,
              std::uint64_t seed = 5) {
  Rng rng(seed);
  Tensor<double> weights;
  auto eval = [&](bool want_grads, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(g.param(t));
    Var out = build(g, vars);
    if (weights.size() != g.value(out).size()) weights = rng.normal_tensor<double>(g.shape(out));
    Var loss = op::sum(g, op::mul(g, out, g.input(weights)));
    if (want_grads) {
      g.backward(loss);
      for (Var v : vars) grads->push_back(g.grad(v));
    }
    return g.value(loss)[0];
  };
  std::vector<Tensor<double>> analytic;
  eval(true, &analytic);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> numeric = numeric_grad(inputs[i], [&] { return eval(false, nullptr); });
    EXPECT_LT(rel_error(analytic[i], numeric), tol) << name << " input " << i;
  }
}

Tensor<double> randn(Shape s, std::uint64_t seed) {
  Rng r(seed);
  return r.normal_tensor<double>(std::move(s));
}

// Keeps values away from the kinks of abs / leaky relu.
Tensor<double> away_from_zero(Shape s, std::uint64_t seed) {
  Tensor<double> t = randn(std::move(s), seed);
  for (auto& v : t.values()) v += v >= 0 ? 0.2 : -0.2;
  return t;
}

}  // namespace

TEST(Autograd, ElementwiseOpsMatchFiniteDifferences) {
  check_op("add", {randn({3, 4}, 1), randn({3, 4}, 2)}, [](auto& g, auto& v) { return op::add(g, v[0], v[1]); });
  check_op("sub", {randn({3, 4}, 1), randn({3, 4}, 2)}, [](auto& g, auto& v) { return op::sub(g, v[0], v[1]); });
  check_op("mul", {randn({3, 4}, 1), randn({3, 4}, 2)}, [](auto& g, auto& v) { return op::mul(g, v[0], v[1]); });
  check_op("affine", {randn({5}, 3)}, [](auto& g, auto& v) { return op::affine(g, v[0], 1.7, -0.3); });
  check_op("lincomb", {randn({2, 3}, 1), randn({2, 3}, 2)},
           [](auto& g, auto& v) { return op::lincomb(g, 0.4, v[0], -2.0, v[1]); });
  check_op("leaky_relu", {away_from_zero({4, 4}, 4)}, [](auto& g, auto& v) { return op::leaky_relu(g, v[0]); });
  check_op("sigmoid", {randn({6}, 5)}, [](auto& g, auto& v) { return op::sigmoid(g, v[0]); });
  check_op("silu", {randn({6}, 6)}, [](auto& g, auto& v) { return op::silu(g, v[0]); });
  check_op("abs", {away_from_zero({6}, 7)}, [](auto& g, auto& v) { return op::abs(g, v[0]); });
  Tensor<double> pos = randn({5}, 8);
  for (auto& x : pos.values()) x = 0.2 + 0.6 / (1 + std::exp(-x));
  check_op("log_clamped", {pos}, [](auto& g, auto& v) { return op::log_clamped(g, v[0], 1e-7, 1 - 1e-7); });
}

TEST(Autograd, ReductionsAndReshapes) {
  check_op("sum", {randn({3, 2}, 1)}, [](auto& g, auto& v) { return op::sum(g, v[0]); });
  check_op("mean", {randn({3, 2}, 1)}, [](auto& g, auto& v) { return op::mean(g, v[0]); });
  check_op("weighted_sum", {randn({1}, 1), randn({1}, 2)},
           [](auto& g, auto& v) { return op::weighted_sum<double>(g, {{2.0, v[0]}, {-0.5, v[1]}}); });
  check_op("reshape", {randn({2, 6}, 1)}, [](auto& g, auto& v) { return op::reshape(g, v[0], Shape{3, 4}); });
  check_op("slice_flat", {randn({10}, 1)}, [](auto& g, auto& v) { return op::slice_flat(g, v[0], 2, 7); });
  check_op("slice_cols", {randn({3, 5}, 1)}, [](auto& g, auto& v) { return op::slice_cols(g, v[0], 1, 4); });
  check_op("concat0", {randn({2, 3, 2}, 1), randn({1, 3, 2}, 2)},
           [](auto& g, auto& v) { return op::concat0(g, v[0], v[1]); });
  check_op("concat_cols", {randn({3, 2}, 1), randn({3, 4}, 2)},
           [](auto& g, auto& v) { return op::concat_cols(g, v[0], v[1]); });
  check_op("crop_rows", {randn({2, 5, 3}, 1)}, [](auto& g, auto& v) { return op::crop_rows(g, v[0], 3); });
  check_op("upsample2x", {randn({2, 3, 4}, 1)}, [](auto& g, auto& v) { return op::upsample2x(g, v[0]); });
}

TEST(Autograd, ChannelOpsAndNormalization) {
  check_op("add_channel", {randn({3, 2, 4}, 1), randn({3}, 2)},
           [](auto& g, auto& v) { return op::add_channel(g, v[0], v[1]); });
  check_op("scale_channel", {randn({3, 2, 4}, 1), randn({3}, 2)},
           [](auto& g, auto& v) { return op::scale_channel(g, v[0], v[1]); });
  check_op("glu", {randn({4, 3, 2}, 1)}, [](auto& g, auto& v) { return op::glu(g, v[0]); });
  check_op("group_norm", {randn({4, 3, 5}, 3)}, [](auto& g, auto& v) { return op::group_norm(g, v[0], 2); }, 1e-5);
  check_op("group_norm rows", {randn({3, 6}, 4)}, [](auto& g, auto& v) { return op::group_norm(g, v[0], 3); }, 1e-5);
}

TEST(Autograd, LinearAndConvolution) {
  check_op("linear", {randn({4, 3}, 1), randn({5, 3}, 2), randn({5}, 3)},
           [](auto& g, auto& v) { return op::linear(g, v[0], v[1], v[2]); });
  for (const op::Conv2dGeom geo : {op::Conv2dGeom{1, 1, 1, 1}, op::Conv2dGeom{2, 2, 1, 1}, op::Conv2dGeom{1, 1, 0, 1}}) {
    check_op("conv2d", {randn({2, 5, 6}, 1), randn({3, 2, 3, 3}, 2), randn({3}, 3)},
             [geo](auto& g, auto& v) { return op::conv2d(g, v[0], v[1], v[2], geo); });
  }
}

TEST(Autograd, ConvolutionMatchesDirectLoops) {
  const Tensor<double> x = randn({2, 7, 5}, 11), w = randn({3, 2, 3, 2}, 12), b = randn({3}, 13);
  const op::Conv2dGeom geo{2, 1, 1, 0};
  Graph<double> g;
  const Tensor<double> y = g.value(op::conv2d(g, g.input(x), g.input(w), g.input(b), geo));
  const int ho = (7 + 2 - 3) / 2 + 1, wo = (5 - 2) / 1 + 1;
  ASSERT_EQ(y.shape(), Shape({3, ho, wo}));
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 2; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox + kx;
              if (iy < 0 || iy >= 7 || ix < 0 || ix >= 5) continue;
              acc += w[((co * 2 + ci) * 3 + ky) * 2 + kx] * x[(ci * 7 + iy) * 5 + ix];
            }
        EXPECT_NEAR(y[(co * ho + oy) * wo + ox], acc, 1e-12);
      }
}

TEST(Autograd, LinearMatchesDirectLoops) {
  const Tensor<double> x = randn({3, 4}, 1), w = randn({2, 4}, 2), b = randn({2}, 3);
  Graph<double> g;
  const Tensor<double> y = g.value(op::linear(g, g.input(x), g.input(w), g.input(b)));
  for (int n = 0; n < 3; ++n)
    for (int o = 0; o < 2; ++o) {
      double acc = b[o];
      for (int i = 0; i < 4; ++i) acc += w(o, i) * x(n, i);
      EXPECT_NEAR(y(n, o), acc, 1e-12);
    }
}

TEST(Autograd, GradientsAccumulateOverReuse) {
  Graph<double> g;
  Var a = g.param(Tensor<double>({2}, {1.5, -2.0}));
  Var y = op::sum(g, op::mul(g, a, a));  // d/da sum(a^2) = 2a
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(a)[0], 3.0);
  EXPECT_DOUBLE_EQ(g.grad(a)[1], -4.0);
}

TEST(Autograd, ConstantsCarryNoGradient) {
  Graph<double> g;
  Var c = g.input(Tensor<double>({2}, {1.0, 2.0}));
  Var y = op::sum(g, op::mul(g, c, c));
  EXPECT_FALSE(g.requires_grad(y));
  g.backward(y);
  EXPECT_EQ(g.grad(c)[0], 0.0);
}

TEST(Autograd, ShapeMismatchesAreRejected) {
  Graph<double> g;
  Var a = g.input(Tensor<double>({2, 3}));
  Var b = g.input(Tensor<double>({3, 2}));
  EXPECT_THROW(op::add(g, a, b), ShapeError);
  EXPECT_THROW(op::linear(g, a, b, g.input(Tensor<double>({3}))), ShapeError);
  EXPECT_THROW(g.backward(a), ShapeError);
}
