#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/autograd.hpp"
#include "dgvc/error.hpp"
#include "dgvc/params.hpp"
#include "dgvc/rng.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

// ------------------------------------------------------------------ specs

/// Shape of the x0-predicting generator G(x_t, z, t).
struct GeneratorSpec {
  int feature_dim = 35;       // Q
  int base_channels = 4;      // channels after the input gate
  int n_resblocks = 2;        // 1-D residual blocks in the middle
  int latent_dim = 16;        // L
  int time_embed_dim = 16;
  int downsample_factor = 2;  // power of two; time and frequency are both halved per stage

  int down_stages() const {
    int n = 0;
    for (int f = downsample_factor; f > 1; f /= 2) ++n;
    return n;
  }
  int residual_channels() const { return 8 * base_channels; }

  void validate() const {
    require<InvalidArgument>(feature_dim > 0 && base_channels > 0 && n_resblocks >= 0 && latent_dim > 0 &&
                                 time_embed_dim >= 2,
                             "generator spec: dimensions must be positive");
    require<InvalidArgument>(downsample_factor >= 1 && (downsample_factor & (downsample_factor - 1)) == 0,
                             "generator spec: downsample_factor must be a power of two");
  }
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

/// Shape of the time-dependent PatchGAN discriminator D(x_{t-1}, x_t, t).
struct DiscriminatorSpec {
  int feature_dim = 35;
  int base_channels = 8;
  int n_layers = 2;  // stride-2 stages
  int time_embed_dim = 16;

  void validate() const {
    require<InvalidArgument>(feature_dim > 0 && base_channels > 0 && n_layers >= 0 && time_embed_dim >= 2,
                             "discriminator spec: dimensions must be positive");
  }
  friend bool operator==(const DiscriminatorSpec&, const DiscriminatorSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GeneratorSpec, feature_dim, base_channels, n_resblocks, latent_dim,
                                   time_embed_dim, downsample_factor)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DiscriminatorSpec, feature_dim, base_channels, n_layers, time_embed_dim)

struct NetPreset {
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
};

/// Named presets. "tiny" is the test and acceptance default.
inline NetPreset net_preset(const std::string& name) {
  if (name == "tiny") return {GeneratorSpec{35, 4, 2, 16, 16, 2}, DiscriminatorSpec{35, 8, 2, 16}};
  if (name == "small") return {GeneratorSpec{35, 8, 3, 32, 32, 4}, DiscriminatorSpec{35, 16, 3, 32}};
  if (name == "paper") return {GeneratorSpec{35, 32, 6, 64, 64, 4}, DiscriminatorSpec{35, 64, 3, 64}};
  throw InvalidArgument("unknown net preset '" + name + "' (tiny, small, paper)");
}

// ------------------------------------------------------------------ shared pieces

inline int norm_groups(int channels) {
  for (int g : {4, 2}) if (channels % g == 0) return g;
  return 1;
}

/// Sinusoidal embedding of integer steps: rows [sin(t w_k), cos(t w_k)].
template <class T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& steps, int dim) {
  const int half = dim / 2;
  Tensor<T> e({static_cast<int>(steps.size()), dim});
  for (std::size_t n = 0; n < steps.size(); ++n)
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / std::max(half - 1, 1));
      e(static_cast<int>(n), k) = static_cast<T>(std::sin(steps[n] * freq));
      e(static_cast<int>(n), half + k) = static_cast<T>(std::cos(steps[n] * freq));
    }
  return e;
}

namespace detail {

template <class T>
Var conv(Graph<T>& g, const Bound<T>& p, const std::string& name, Var x, op::Conv2dGeom geo) {
  return op::conv2d(g, x, p(name + ".w"), p(name + ".b"), geo);
}

template <class T>
Var dense(Graph<T>& g, const Bound<T>& p, const std::string& name, Var x) {
  return op::linear(g, x, p(name + ".w"), p(name + ".b"));
}

// Row 0 of a [1, C] tensor as a [C] vector.
template <class T>
Var row_vec(Graph<T>& g, Var v) {
  return op::reshape(g, v, Shape{static_cast<int>(g.value(v).size())});
}

}  // namespace detail

// ------------------------------------------------------------------ generator

/// 2-1-2D convolutional generator predicting clean features from (x_t, z, t).
///
/// Downsampling and upsampling use 2-D convolutions over (frequency, time);
/// the middle residual blocks are 1-D over time. Every normalization is a
/// group norm whose per-channel scale and shift are predicted from z by a
/// small fully connected network; a sinusoidal step embedding, projected per
/// layer, is added as a channel bias.
template <class T>
class ConvGenerator {
 public:
  explicit ConvGenerator(GeneratorSpec spec) : spec_(spec) { spec_.validate(); }

  const GeneratorSpec& spec() const noexcept { return spec_; }

  ParamStore<T> init(Rng& rng) const {
    ParamBuilder<T> b(rng);
    const int c = spec_.base_channels, L = spec_.latent_dim, E = spec_.time_embed_dim;
    const int M = mod_hidden();
    b.dense("time.fc", E, E);
    b.dense("mod.fc1", L, M);
    b.dense("mod.fc2", M, M);
    auto norm = [&](const std::string& name, int ch, bool timed) {
      // Small initial modulation so the untrained net starts near plain group norm.
      b.dense(name + ".mod", M, 2 * ch, 0.1);
      if (timed) b.dense(name + ".time", E, ch, 0.5);
    };
    b.conv("in", 1, 2 * c, 3, 3);
    int ch = c;
    for (int i = 0; i < spec_.down_stages(); ++i) {
      b.conv("down" + std::to_string(i), ch, 4 * ch, 3, 3);
      norm("down" + std::to_string(i), 4 * ch, true);
      ch *= 2;
    }
    const int flat = ch * reduced_height(), R = spec_.residual_channels();
    b.conv("to1d", flat, R, 1, 1);
    norm("to1d", R, false);
    for (int j = 0; j < spec_.n_resblocks; ++j) {
      const std::string n = "res" + std::to_string(j);
      b.conv(n + ".a", R, 2 * R, 1, 3);
      norm(n + ".a", 2 * R, true);
      b.conv(n + ".b", R, R, 1, 3);
      norm(n + ".b", R, false);
    }
    b.conv("to2d", R, flat, 1, 1);
    norm("to2d", flat, false);
    for (int i = spec_.down_stages() - 1; i >= 0; --i) {
      b.conv("up" + std::to_string(i), ch, ch, 3, 3);
      norm("up" + std::to_string(i), ch, true);
      ch /= 2;
    }
    b.conv("out", c, 1, 3, 3);
    return b.take();
  }

  /// x: [Q, T_seq], z: [1, L]. Returns [Q, T_seq].
  Var forward(Graph<T>& g, const Bound<T>& p, Var x, Var z, int t) const {
    const Shape& xs = g.shape(x);
    require<ShapeError>(xs.size() == 2 && xs[0] == spec_.feature_dim,
                        "generator input must be [" + std::to_string(spec_.feature_dim) + ", T], got " + shape_str(xs));
    const int q = xs[0], len = xs[1];
    require<ShapeError>(len > 0 && len % spec_.downsample_factor == 0,
                        "sequence length " + std::to_string(len) + " not divisible by downsample factor " +
                            std::to_string(spec_.downsample_factor));
    require<ShapeError>(g.shape(z) == Shape({1, spec_.latent_dim}), "latent must be [1, L]");

    Var temb = op::silu(g, detail::dense(g, p, "time.fc", g.input(sinusoidal_embedding<T>({t}, spec_.time_embed_dim))));
    Var zh = op::leaky_relu(g, detail::dense(g, p, "mod.fc1", z));
    zh = op::leaky_relu(g, detail::dense(g, p, "mod.fc2", zh));

    auto norm = [&](Var h, const std::string& name, bool timed) {
      const int ch = g.shape(h)[0];
      Var n = op::group_norm(g, h, norm_groups(ch));
      Var ss = detail::dense(g, p, name + ".mod", zh);
      n = op::scale_channel(g, n, op::slice_flat(g, ss, 0, ch));
      n = op::add_channel(g, n, op::slice_flat(g, ss, ch, 2 * ch));
      if (timed) n = op::add_channel(g, n, detail::row_vec(g, detail::dense(g, p, name + ".time", temb)));
      return n;
    };
    const op::Conv2dGeom same3{1, 1, 1, 1}, down3{2, 2, 1, 1}, same1x3{1, 1, 0, 1}, pointwise{};

    Var h = op::reshape(g, x, Shape{1, q, len});
    h = op::glu(g, detail::conv(g, p, "in", h, same3));
    std::vector<int> heights;
    for (int i = 0; i < spec_.down_stages(); ++i) {
      heights.push_back(g.shape(h)[1]);
      const std::string n = "down" + std::to_string(i);
      h = op::glu(g, norm(detail::conv(g, p, n, h, down3), n, true));
    }
    const Shape s2 = g.shape(h);
    h = op::reshape(g, h, Shape{s2[0] * s2[1], 1, s2[2]});
    h = norm(detail::conv(g, p, "to1d", h, pointwise), "to1d", false);
    for (int j = 0; j < spec_.n_resblocks; ++j) {
      const std::string n = "res" + std::to_string(j);
      Var r = op::glu(g, norm(detail::conv(g, p, n + ".a", h, same1x3), n + ".a", true));
      r = norm(detail::conv(g, p, n + ".b", r, same1x3), n + ".b", false);
      h = op::add(g, h, r);
    }
    h = norm(detail::conv(g, p, "to2d", h, pointwise), "to2d", false);
    h = op::reshape(g, h, s2);
    for (int i = spec_.down_stages() - 1; i >= 0; --i) {
      const std::string n = "up" + std::to_string(i);
      h = op::crop_rows(g, op::upsample2x(g, h), heights[i]);
      h = op::glu(g, norm(detail::conv(g, p, n, h, same3), n, true));
    }
    h = detail::conv(g, p, "out", h, same3);
    return op::reshape(g, h, Shape{q, len});
  }

  /// Gradient-free evaluation.
  Tensor<T> operator()(const ParamStore<T>& params, const Tensor<T>& x, const Tensor<T>& z, int t) const {
    Graph<T> g;
    Bound<T> p = bind(g, params, false);
    Var out = forward(g, p, g.input(x), g.input(z.reshaped({1, spec_.latent_dim})), t);
    return g.value(out);
  }

 private:
  int mod_hidden() const { return std::max(spec_.latent_dim, 16); }
  int reduced_height() const {
    int h = spec_.feature_dim;
    for (int i = 0; i < spec_.down_stages(); ++i) h = (h + 1) / 2;
    return h;
  }

  GeneratorSpec spec_;
};

// ------------------------------------------------------------------ discriminator

/// Time-dependent PatchGAN discriminator. The pair (x_{t-1}, x_t) enters as a
/// two-channel image; the last layer is a convolution producing a grid of
/// per-patch probabilities.
template <class T>
class PatchDiscriminator {
 public:
  explicit PatchDiscriminator(DiscriminatorSpec spec) : spec_(spec) { spec_.validate(); }

  const DiscriminatorSpec& spec() const noexcept { return spec_; }

  ParamStore<T> init(Rng& rng) const {
    ParamBuilder<T> b(rng);
    const int c = spec_.base_channels, E = spec_.time_embed_dim;
    b.dense("time.fc", E, E);
    b.conv("in", 2, 2 * c, 3, 3);
    int ch = c;
    for (int i = 0; i < spec_.n_layers; ++i) {
      const std::string n = "layer" + std::to_string(i);
      b.conv(n, ch, 4 * ch, 3, 3);
      b.dense(n + ".time", E, 4 * ch, 0.5);
      ch *= 2;
    }
    b.conv("out", ch, 1, 3, 3);
    return b.take();
  }

  /// Patch grid dimensions for a [Q, len] input.
  std::pair<int, int> patch_grid(int len) const {
    int h = spec_.feature_dim, w = len;
    for (int i = 0; i < spec_.n_layers; ++i) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    return {h, w};
  }

  /// Receptive field of one output patch, in input bins (same on both axes).
  int receptive_field() const {
    int r = 1, jump = 1;
    auto layer = [&](int k, int s) {
      r += (k - 1) * jump;
      jump *= s;
    };
    layer(3, 1);
    for (int i = 0; i < spec_.n_layers; ++i) layer(3, 2);
    layer(3, 1);
    return r;
  }

  /// Probabilities in (0, 1), shape [Hp, Wp].
  Var forward(Graph<T>& g, const Bound<T>& p, Var x_prev, Var x_t, int t) const {
    const Shape& a = g.shape(x_prev);
    require<ShapeError>(a == g.shape(x_t), "discriminator pair shape mismatch: " + shape_str(a) + " vs " +
                                               shape_str(g.shape(x_t)));
    require<ShapeError>(a.size() == 2 && a[0] == spec_.feature_dim, "discriminator input must be [Q, T]");
    Var temb = op::silu(g, detail::dense(g, p, "time.fc", g.input(sinusoidal_embedding<T>({t}, spec_.time_embed_dim))));
    Var h = op::concat0(g, op::reshape(g, x_prev, Shape{1, a[0], a[1]}), op::reshape(g, x_t, Shape{1, a[0], a[1]}));
    h = op::glu(g, detail::conv(g, p, "in", h, {1, 1, 1, 1}));
    for (int i = 0; i < spec_.n_layers; ++i) {
      const std::string n = "layer" + std::to_string(i);
      h = detail::conv(g, p, n, h, {2, 2, 1, 1});
      h = op::group_norm(g, h, norm_groups(g.shape(h)[0]));
      h = op::add_channel(g, h, detail::row_vec(g, detail::dense(g, p, n + ".time", temb)));
      h = op::glu(g, h);
    }
    h = detail::conv(g, p, "out", h, {1, 1, 1, 1});
    const Shape hs = g.shape(h);
    return op::sigmoid(g, op::reshape(g, h, Shape{hs[1], hs[2]}));
  }

  Tensor<T> operator()(const ParamStore<T>& params, const Tensor<T>& x_prev, const Tensor<T>& x_t, int t) const {
    Graph<T> g;
    Bound<T> p = bind(g, params, false);
    return g.value(forward(g, p, g.input(x_prev), g.input(x_t), t));
  }

 private:
  DiscriminatorSpec spec_;
};

// ------------------------------------------------------------------ vector-data nets

/// Fully connected diffusion-GAN generator over batches of vectors [N, F].
/// Used for low-dimensional experiments and gradient checks.
struct MlpGeneratorSpec {
  int data_dim = 1;
  int hidden = 64;
  int n_blocks = 2;
  int latent_dim = 8;
  int time_embed_dim = 16;
  int mod_hidden = 32;  // 0: z feeds the modulation heads directly
};

struct MlpDiscriminatorSpec {
  int data_dim = 1;
  int hidden = 64;
  int n_blocks = 2;
  int time_embed_dim = 16;
};

template <class T>
class MlpGenerator {
 public:
  explicit MlpGenerator(MlpGeneratorSpec spec) : spec_(spec) {
    require<InvalidArgument>(spec.data_dim > 0 && spec.hidden > 0 && spec.n_blocks >= 1 && spec.latent_dim > 0 &&
                                 spec.time_embed_dim >= 2 && spec.mod_hidden >= 0,
                             "mlp generator spec: bad dimensions");
  }
  const MlpGeneratorSpec& spec() const noexcept { return spec_; }

  ParamStore<T> init(Rng& rng) const {
    ParamBuilder<T> b(rng);
    const int F = spec_.data_dim, H = spec_.hidden, E = spec_.time_embed_dim;
    const int zin = spec_.mod_hidden > 0 ? spec_.mod_hidden : spec_.latent_dim;
    if (spec_.mod_hidden > 0) b.dense("mod.fc", spec_.latent_dim, spec_.mod_hidden);
    b.dense("in", F, H);
    b.dense("in.time", E, H, 0.5);
    for (int i = 0; i < spec_.n_blocks; ++i) {
      const std::string n = "block" + std::to_string(i);
      b.dense(n, H, H);
      b.dense(n + ".mod", zin, 2 * H, 0.5);
      b.dense(n + ".time", E, H, 0.5);
    }
    b.dense("out", H, F);
    return b.take();
  }

  /// x: [N, F], z: [N, L], one step per row.
  Var forward(Graph<T>& g, const Bound<T>& p, Var x, Var z, const std::vector<int>& steps) const {
    const int n = g.shape(x)[0], H = spec_.hidden;
    require<ShapeError>(g.shape(x) == Shape({n, spec_.data_dim}) && g.shape(z) == Shape({n, spec_.latent_dim}) &&
                            steps.size() == static_cast<std::size_t>(n),
                        "mlp generator: inconsistent batch shapes");
    Var temb = g.input(sinusoidal_embedding<T>(steps, spec_.time_embed_dim));
    Var zh = spec_.mod_hidden > 0 ? op::leaky_relu(g, detail::dense(g, p, "mod.fc", z)) : z;
    Var h = op::add(g, detail::dense(g, p, "in", x), detail::dense(g, p, "in.time", temb));
    h = op::leaky_relu(g, h);
    for (int i = 0; i < spec_.n_blocks; ++i) {
      const std::string nm = "block" + std::to_string(i);
      h = op::group_norm(g, detail::dense(g, p, nm, h), n);
      Var ss = detail::dense(g, p, nm + ".mod", zh);
      h = op::mul(g, h, op::affine(g, op::slice_cols(g, ss, 0, H), T(1), T(1)));
      h = op::add(g, h, op::slice_cols(g, ss, H, 2 * H));
      h = op::add(g, h, detail::dense(g, p, nm + ".time", temb));
      h = op::leaky_relu(g, h);
    }
    return detail::dense(g, p, "out", h);
  }

  Tensor<T> operator()(const ParamStore<T>& params, const Tensor<T>& x, const Tensor<T>& z,
                       const std::vector<int>& steps) const {
    Graph<T> g;
    Bound<T> p = bind(g, params, false);
    return g.value(forward(g, p, g.input(x), g.input(z), steps));
  }

 private:
  MlpGeneratorSpec spec_;
};

template <class T>
class MlpDiscriminator {
 public:
  explicit MlpDiscriminator(MlpDiscriminatorSpec spec) : spec_(spec) {
    require<InvalidArgument>(spec.data_dim > 0 && spec.hidden > 0 && spec.n_blocks >= 0 && spec.time_embed_dim >= 2,
                             "mlp discriminator spec: bad dimensions");
  }
  const MlpDiscriminatorSpec& spec() const noexcept { return spec_; }

  ParamStore<T> init(Rng& rng) const {
    ParamBuilder<T> b(rng);
    const int F = spec_.data_dim, H = spec_.hidden, E = spec_.time_embed_dim;
    b.dense("in", 2 * F, H);
    b.dense("in.time", E, H, 0.5);
    for (int i = 0; i < spec_.n_blocks; ++i) b.dense("block" + std::to_string(i), H, H);
    b.dense("out", H, 1);
    return b.take();
  }

  /// Probabilities [N, 1].
  Var forward(Graph<T>& g, const Bound<T>& p, Var x_prev, Var x_t, const std::vector<int>& steps) const {
    require<ShapeError>(g.shape(x_prev) == g.shape(x_t), "mlp discriminator: pair shape mismatch");
    Var temb = g.input(sinusoidal_embedding<T>(steps, spec_.time_embed_dim));
    Var h = op::add(g, detail::dense(g, p, "in", op::concat_cols(g, x_prev, x_t)), detail::dense(g, p, "in.time", temb));
    h = op::leaky_relu(g, h);
    for (int i = 0; i < spec_.n_blocks; ++i)
      h = op::leaky_relu(g, detail::dense(g, p, "block" + std::to_string(i), h));
    return op::sigmoid(g, detail::dense(g, p, "out", h));
  }

 private:
  MlpDiscriminatorSpec spec_;
};

// ------------------------------------------------------------------ counts

inline std::size_t param_count(const GeneratorSpec& spec) {
  Rng rng(0);
  return ConvGenerator<float>(spec).init(rng).total_size();
}

inline std::size_t param_count(const DiscriminatorSpec& spec) {
  Rng rng(0);
  return PatchDiscriminator<float>(spec).init(rng).total_size();
}

}  // namespace dgvc
