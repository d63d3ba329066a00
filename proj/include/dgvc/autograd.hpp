#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "dgvc/error.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

/// Handle to a node on a Graph tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward() walks
/// them in reverse and calls each node's pullback. A node only records a
/// pullback when at least one of its inputs requires a gradient.
template <class T>
class Graph {
 public:
  using Pullback = std::function<void(Graph&)>;

  Var input(Tensor<T> value) { return push(std::move(value), false, nullptr); }
  Var param(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Pullback fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_[v.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer, allocated as zeros on first access.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape(), T(0));
    return n.grad;
  }

  /// Gradient accumulated by backward(); zeros if none reached the node.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() != n.value.size()) return Tensor<T>(n.value.shape(), T(0));
    return n.grad;
  }

  void backward(Var root) {
    require<ShapeError>(value(root).size() == 1, "backward() needs a scalar root");
    if (!requires_grad(root)) return;
    grad_buffer(root)[0] += T(1);
    for (std::int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.pullback && n.grad.size() == n.value.size()) n.pullback(*this);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Pullback pullback;
  };

  Var push(Tensor<T> value, bool requires_grad, Pullback fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, std::move(fn)});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;  // deque: references stay valid while the tape grows
};

namespace op {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

namespace detail {

inline void same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Size of everything after the leading (channel) axis.
inline std::size_t inner(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 1; i < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "add");
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a, b}, [a, b, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    for (Var in : {a, b}) {
      if (!gr.requires_grad(in)) continue;
      auto& gi = gr.grad_buffer(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "sub");
  Tensor<T> out = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a, b}, [a, b, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "mul");
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a, b}, [a, b, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& av2 = gr.value(a);
    const Tensor<T>& bv2 = gr.value(b);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av2[i];
    }
  });
}

/// y = s * a + c for scalars s, c.
template <class T>
Var affine(Graph<T>& g, Var a, T s, T c = T(0)) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = s * v + c;
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, s](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
  });
}

/// y = sa * a + sb * b, the building block for diffusion mixing.
template <class T>
Var lincomb(Graph<T>& g, T sa, Var a, T sb, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "lincomb");
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * av[i] + sb * bv[i];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a, b}, [a, b, o, sa, sb](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sa * go[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sb * go[i];
    }
  });
}

template <class T>
Var leaky_relu(Graph<T>& g, Var a, T slope = T(0.2)) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = v > T(0) ? v : slope * v;
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, slope](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& av = gr.value(a);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += av[i] > T(0) ? go[i] : slope * go[i];
  });
}

template <class T>
inline T sigmoid_scalar(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
Var sigmoid(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& y = gr.value(o);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * y[i] * (T(1) - y[i]);
  });
}

/// x * sigmoid(x)
template <class T>
Var silu(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = v * sigmoid_scalar(v);
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& av = gr.value(a);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const T s = sigmoid_scalar(av[i]);
      ga[i] += go[i] * (s + av[i] * s * (T(1) - s));
    }
  });
}

template <class T>
Var abs(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.values()) v = std::abs(v);
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& av = gr.value(a);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga[i] += av[i] > T(0) ? go[i] : (av[i] < T(0) ? -go[i] : T(0));
  });
}

/// log(clamp(a, lo, hi)); zero gradient where the clamp is active.
template <class T>
Var log_clamped(Graph<T>& g, Var a, T lo, T hi) {
  const Tensor<T>& av = g.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::log(std::clamp(av[i], lo, hi));
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, lo, hi](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& x = gr.value(a);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (x[i] > lo && x[i] < hi) ga[i] += go[i] / x[i];
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var sum(Graph<T>& g, Var a) {
  const Tensor<T>& av = g.value(a);
  T s = T(0);
  for (T v : av.values()) s += v;
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(Tensor<T>({1}, s), {a}, [a, o](Graph<T>& gr) {
    const T go = gr.grad_buffer(o)[0];
    auto& ga = gr.grad_buffer(a);
    for (auto& v : ga.values()) v += go;
  });
}

template <class T>
Var mean(Graph<T>& g, Var a) {
  const std::size_t n = g.value(a).size();
  require<ShapeError>(n > 0, "mean of empty tensor");
  return affine(g, sum(g, a), T(1) / static_cast<T>(n));
}

/// Sum of a list of scalars with weights.
template <class T>
Var weighted_sum(Graph<T>& g, const std::vector<std::pair<T, Var>>& terms) {
  require<InvalidArgument>(!terms.empty(), "weighted_sum of nothing");
  Var acc = affine(g, terms[0].second, terms[0].first);
  for (std::size_t i = 1; i < terms.size(); ++i) {
    Var w = affine(g, terms[i].second, terms[i].first);
    acc = add(g, acc, w);
  }
  return acc;
}

// ---------------------------------------------------------------- shape ops

template <class T>
Var reshape(Graph<T>& g, Var a, Shape s) {
  Tensor<T> out = g.value(a).reshaped(std::move(s));
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
  });
}

/// Contiguous flat slice [begin, end) as a rank-1 tensor.
template <class T>
Var slice_flat(Graph<T>& g, Var a, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = g.value(a);
  require<ShapeError>(begin <= end && end <= av.size(), "slice_flat out of range");
  Tensor<T> out({static_cast<int>(end - begin)});
  std::copy(av.data() + begin, av.data() + end, out.data());
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, begin](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    auto& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[begin + i] += go[i];
  });
}

/// Columns [begin, end) of a rank-2 tensor.
template <class T>
Var slice_cols(Graph<T>& g, Var a, int begin, int end) {
  const Tensor<T>& av = g.value(a);
  require<ShapeError>(av.rank() == 2 && 0 <= begin && begin <= end && end <= av.dim(1),
                      "slice_cols out of range");
  const int rows = av.dim(0), cols = av.dim(1), w = end - begin;
  Tensor<T> out({rows, w});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c) out(r, c) = av(r, begin + c);
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, begin, rows, w, cols](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    auto& ga = gr.grad_buffer(a);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c) ga[static_cast<std::size_t>(r) * cols + begin + c] += go(r, c);
  });
}

/// Stack along the leading axis: [C1, ...] ++ [C2, ...] -> [C1 + C2, ...].
template <class T>
Var concat0(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require<ShapeError>(av.rank() == bv.rank() && av.rank() >= 1 && detail::inner(av.shape()) == detail::inner(bv.shape()),
                      "concat0: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  for (std::size_t i = 1; i < av.rank(); ++i)
    require<ShapeError>(av.dim(i) == bv.dim(i), "concat0: trailing dims differ");
  Shape s = av.shape();
  s[0] += bv.dim(0);
  Tensor<T> out(s);
  std::copy(av.values().begin(), av.values().end(), out.data());
  std::copy(bv.values().begin(), bv.values().end(), out.data() + av.size());
  const std::size_t na = av.size();
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a, b}, [a, b, o, na](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[na + i];
    }
  });
}

/// Concatenate rank-2 tensors along columns: [N, A] ++ [N, B] -> [N, A + B].
template <class T>
Var concat_cols(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require<ShapeError>(av.rank() == 2 && bv.rank() == 2 && av.dim(0) == bv.dim(0), "concat_cols: row mismatch");
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  Tensor<T> out({n, ca + cb});
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < ca; ++c) out(r, c) = av(r, c);
    for (int c = 0; c < cb; ++c) out(r, ca + c) = bv(r, c);
  }
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a, b}, [a, b, o, n, ca, cb](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    if (gr.requires_grad(a)) {
      auto& ga = gr.grad_buffer(a);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < ca; ++c) ga(r, c) += go(r, c);
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < cb; ++c) gb(r, c) += go(r, ca + c);
    }
  });
}

/// Keep the first `rows` entries of axis 1 of a [C, H, W] tensor.
template <class T>
Var crop_rows(Graph<T>& g, Var a, int rows) {
  const Tensor<T>& av = g.value(a);
  require<ShapeError>(av.rank() == 3 && rows <= av.dim(1), "crop_rows: bad shape");
  const int c = av.dim(0), h = av.dim(1), w = av.dim(2);
  if (rows == h) return a;
  Tensor<T> out({c, rows, w});
  for (int ch = 0; ch < c; ++ch)
    std::copy_n(av.data() + static_cast<std::size_t>(ch) * h * w, static_cast<std::size_t>(rows) * w,
                out.data() + static_cast<std::size_t>(ch) * rows * w);
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, c, h, w, rows](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    auto& ga = gr.grad_buffer(a);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * w; ++i)
        ga[static_cast<std::size_t>(ch) * h * w + i] += go[static_cast<std::size_t>(ch) * rows * w + i];
  });
}

/// Nearest-neighbour x2 upsampling of both spatial axes of [C, H, W].
template <class T>
Var upsample2x(Graph<T>& g, Var a) {
  const Tensor<T>& av = g.value(a);
  require<ShapeError>(av.rank() == 3, "upsample2x expects [C,H,W]");
  const int c = av.dim(0), h = av.dim(1), w = av.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        out[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + x] =
            av[(static_cast<std::size_t>(ch) * h + y / 2) * w + x / 2];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {a}, [a, o, c, h, w](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    auto& ga = gr.grad_buffer(a);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int x = 0; x < 2 * w; ++x)
          ga[(static_cast<std::size_t>(ch) * h + y / 2) * w + x / 2] +=
              go[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w + x];
  });
}

// ---------------------------------------------------------------- channel ops

/// x[C, ...] + b[C] broadcast over trailing axes.
template <class T>
Var add_channel(Graph<T>& g, Var x, Var b) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& bv = g.value(b);
  require<ShapeError>(xv.rank() >= 1 && bv.size() == static_cast<std::size_t>(xv.dim(0)),
                      "add_channel: " + shape_str(bv.shape()) + " vs " + shape_str(xv.shape()));
  const std::size_t c = xv.dim(0), in = detail::inner(xv.shape());
  Tensor<T> out = xv;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < in; ++i) out[ch * in + i] += bv[ch];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {x, b}, [x, b, o, c, in](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    if (gr.requires_grad(x)) {
      auto& gx = gr.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t ch = 0; ch < c; ++ch) {
        T s = T(0);
        for (std::size_t i = 0; i < in; ++i) s += go[ch * in + i];
        gb[ch] += s;
      }
    }
  });
}

/// x[C, ...] * (1 + s[C]) broadcast over trailing axes.
template <class T>
Var scale_channel(Graph<T>& g, Var x, Var s) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& sv = g.value(s);
  require<ShapeError>(xv.rank() >= 1 && sv.size() == static_cast<std::size_t>(xv.dim(0)),
                      "scale_channel: " + shape_str(sv.shape()) + " vs " + shape_str(xv.shape()));
  const std::size_t c = xv.dim(0), in = detail::inner(xv.shape());
  Tensor<T> out = xv;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < in; ++i) out[ch * in + i] *= T(1) + sv[ch];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {x, s}, [x, s, o, c, in](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& xv2 = gr.value(x);
    const Tensor<T>& sv2 = gr.value(s);
    if (gr.requires_grad(x)) {
      auto& gx = gr.grad_buffer(x);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < in; ++i) gx[ch * in + i] += go[ch * in + i] * (T(1) + sv2[ch]);
    }
    if (gr.requires_grad(s)) {
      auto& gs = gr.grad_buffer(s);
      for (std::size_t ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (std::size_t i = 0; i < in; ++i) acc += go[ch * in + i] * xv2[ch * in + i];
        gs[ch] += acc;
      }
    }
  });
}

/// Gated linear unit over the leading axis: [2C, ...] -> [C, ...], a * sigmoid(b).
template <class T>
Var glu(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  require<ShapeError>(xv.rank() >= 1 && xv.dim(0) % 2 == 0, "glu needs an even leading axis");
  Shape s = xv.shape();
  s[0] /= 2;
  const std::size_t half = xv.size() / 2;
  Tensor<T> out(s);
  for (std::size_t i = 0; i < half; ++i) out[i] = xv[i] * sigmoid_scalar(xv[half + i]);
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {x}, [x, o, half](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& xv2 = gr.value(x);
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < half; ++i) {
      const T sg = sigmoid_scalar(xv2[half + i]);
      gx[i] += go[i] * sg;
      gx[half + i] += go[i] * xv2[i] * sg * (T(1) - sg);
    }
  });
}

/// Normalize `groups` equal contiguous chunks to zero mean and unit variance
/// (population variance, no affine). With a channel-major [C, ...] layout this
/// is group normalization; with [N, F] and groups = N it normalizes rows.
template <class T>
Var group_norm(Graph<T>& g, Var x, int groups, T eps = T(1e-5)) {
  const Tensor<T>& xv = g.value(x);
  require<ShapeError>(groups > 0 && xv.size() % static_cast<std::size_t>(groups) == 0,
                      "group_norm: size not divisible by groups");
  const std::size_t m = xv.size() / groups;
  Tensor<T> out(xv.shape());
  std::vector<T> inv_std(groups);
  for (int gi = 0; gi < groups; ++gi) {
    const T* p = xv.data() + gi * m;
    T mu = T(0);
    for (std::size_t i = 0; i < m; ++i) mu += p[i];
    mu /= static_cast<T>(m);
    T var = T(0);
    for (std::size_t i = 0; i < m; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<T>(m);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[gi] = is;
    for (std::size_t i = 0; i < m; ++i) out[gi * m + i] = (p[i] - mu) * is;
  }
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {x}, [x, o, groups, m, inv_std](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    const Tensor<T>& y = gr.value(o);
    auto& gx = gr.grad_buffer(x);
    for (int gi = 0; gi < groups; ++gi) {
      T mg = T(0), mgy = T(0);
      for (std::size_t i = 0; i < m; ++i) {
        mg += go[gi * m + i];
        mgy += go[gi * m + i] * y[gi * m + i];
      }
      mg /= static_cast<T>(m);
      mgy /= static_cast<T>(m);
      for (std::size_t i = 0; i < m; ++i)
        gx[gi * m + i] += inv_std[gi] * (go[gi * m + i] - mg - y[gi * m + i] * mgy);
    }
  });
}

// ---------------------------------------------------------------- dense / conv

/// y[N, out] = x[N, in] * W[out, in]^T + b[out]
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  require<ShapeError>(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1) &&
                          bv.size() == static_cast<std::size_t>(wv.dim(0)),
                      "linear: x" + shape_str(xv.shape()) + " W" + shape_str(wv.shape()));
  const int n = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
  Tensor<T> out({n, outd});
  MapMat<T> y(out.data(), n, outd);
  y.noalias() = CMapMat<T>(xv.data(), n, in) * CMapMat<T>(wv.data(), outd, in).transpose();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < outd; ++c) y(r, c) += bv[c];
  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {x, w, b}, [x, w, b, o, n, in, outd](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    CMapMat<T> dy(go.data(), n, outd);
    if (gr.requires_grad(x)) {
      auto& gx = gr.grad_buffer(x);
      MapMat<T>(gx.data(), n, in).noalias() += dy * CMapMat<T>(gr.value(w).data(), outd, in);
    }
    if (gr.requires_grad(w)) {
      auto& gw = gr.grad_buffer(w);
      MapMat<T>(gw.data(), outd, in).noalias() += dy.transpose() * CMapMat<T>(gr.value(x).data(), n, in);
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < outd; ++c) gb[c] += go(r, c);
    }
  });
}

struct Conv2dGeom {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
};

namespace detail {

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <class T>
void im2col(const T* x, int cin, int h, int w, int kh, int kw, const Conv2dGeom& geo, int ho, int wo, T* col) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * geo.stride_h - geo.pad_h + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * geo.stride_w - geo.pad_w + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* col, int cin, int h, int w, int kh, int kw, const Conv2dGeom& geo, int ho, int wo, T* x) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * kh + ky) * kw + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * geo.stride_h - geo.pad_h + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          T* dst = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * geo.stride_w - geo.pad_w + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D cross-correlation of a single example: x[Cin, H, W], w[Cout, Cin, kh, kw],
/// b[Cout] -> [Cout, Ho, Wo]. A 1-D convolution is the H = kh = 1 case.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, Conv2dGeom geo) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  require<ShapeError>(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0) &&
                          g.value(b).size() == static_cast<std::size_t>(wv.dim(0)),
                      "conv2d: x" + shape_str(xv.shape()) + " W" + shape_str(wv.shape()));
  const int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = detail::conv_out(h, kh, geo.stride_h, geo.pad_h);
  const int wo = detail::conv_out(wd, kw, geo.stride_w, geo.pad_w);
  require<ShapeError>(ho > 0 && wo > 0, "conv2d: empty output for input " + shape_str(xv.shape()));
  const int k = cin * kh * kw, p = ho * wo;

  std::vector<T> col(static_cast<std::size_t>(k) * p);
  detail::im2col(xv.data(), cin, h, wd, kh, kw, geo, ho, wo, col.data());
  Tensor<T> out({cout, ho, wo});
  MapMat<T> y(out.data(), cout, p);
  y.noalias() = CMapMat<T>(wv.data(), cout, k) * CMapMat<T>(col.data(), k, p);
  const Tensor<T>& bv = g.value(b);
  for (int c = 0; c < cout; ++c) y.row(c).array() += bv[c];

  Var o{static_cast<std::int32_t>(g.size())};
  return g.record(std::move(out), {x, w, b}, [=](Graph<T>& gr) {
    const Tensor<T>& go = gr.grad_buffer(o);
    CMapMat<T> dy(go.data(), cout, p);
    const bool need_w = gr.requires_grad(w), need_x = gr.requires_grad(x);
    if (need_w) {
      std::vector<T> col2(static_cast<std::size_t>(k) * p);
      detail::im2col(gr.value(x).data(), cin, h, wd, kh, kw, geo, ho, wo, col2.data());
      auto& gw = gr.grad_buffer(w);
      MapMat<T>(gw.data(), cout, k).noalias() += dy * CMapMat<T>(col2.data(), k, p).transpose();
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (int c = 0; c < cout; ++c) gb[c] += dy.row(c).sum();
    }
    if (need_x) {
      std::vector<T> dcol(static_cast<std::size_t>(k) * p);
      MapMat<T>(dcol.data(), k, p).noalias() = CMapMat<T>(gr.value(w).data(), cout, k).transpose() * dy;
      auto& gx = gr.grad_buffer(x);
      detail::col2im(dcol.data(), cin, h, wd, kh, kw, geo, ho, wo, gx.data());
    }
  });
}

}  // namespace op
}  // namespace dgvc
