#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/autograd.hpp"
#include "dgvc/error.hpp"
#include "dgvc/features.hpp"
#include "dgvc/nets.hpp"
#include "dgvc/objectives.hpp"
#include "dgvc/optim.hpp"
#include "dgvc/params.hpp"
#include "dgvc/rng.hpp"
#include "dgvc/schedule.hpp"

namespace dgvc {

struct TrainConfig {
  long iterations = 2000;
  int batch_size = 2;
  double lr_g = 0.03;
  double lr_d = 0.03;
  double momentum = 0.5;
  std::string optimizer = "momentum_sgd";
  double lambda_cycle = 10.0;
  double lambda_identity = 5.0;
  double identity_anneal_fraction = 0.2;  // identity weight drops to zero after this share of iterations
  int crop_frames = 64;
  std::uint64_t seed = 1234;
  long checkpoint_every = 500;
  double r1_gamma = 0.0;  // placeholder for an R1 penalty; only 0 is accepted

  void validate() const {
    require<InvalidArgument>(iterations >= 0, "iterations must be non-negative");
    require<InvalidArgument>(batch_size > 0 && crop_frames > 0 && checkpoint_every > 0, "batch, crop and checkpoint interval must be positive");
    require<InvalidArgument>(lr_g >= 0.0 && lr_d >= 0.0, "learning rates must be non-negative");
    require<InvalidArgument>(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
    require<InvalidArgument>(lambda_cycle >= 0.0 && lambda_identity >= 0.0, "loss weights must be non-negative");
    require<InvalidArgument>(identity_anneal_fraction >= 0.0 && identity_anneal_fraction <= 1.0,
                             "identity_anneal_fraction must be in [0, 1]");
    parse_optimizer(optimizer);
    require<InvalidArgument>(r1_gamma == 0.0, "r1_gamma: the R1 penalty is not implemented, leave it at 0");
  }

  OptimizerConfig optimizer_config(double lr) const { return {parse_optimizer(optimizer), lr, momentum}; }

  double identity_weight(long step) const {
    return static_cast<double>(step) < identity_anneal_fraction * static_cast<double>(iterations) ? lambda_identity : 0.0;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, iterations, batch_size, lr_g, lr_d, momentum, optimizer, lambda_cycle,
                                   lambda_identity, identity_anneal_fraction, crop_frames, checkpoint_every, r1_gamma)

/// One generator/discriminator pair per direction plus everything needed to
/// resume: optimizer moments, the step counter and the named random streams.
/// Generator "xy" maps speaker X to Y and is judged by discriminator "y".
struct TrainState {
  GeneratorSpec gen_spec;
  DiscriminatorSpec disc_spec;
  std::vector<double> betas;  // schedule the model was trained with
  ParamStore<float> g_xy, g_yx, d_x, d_y;
  Moments<float> opt_g_xy, opt_g_yx, opt_d_x, opt_d_y;
  long step = 0;
  Rng rng_data, rng_diffusion, rng_latent;
  SpeakerStats stats_x, stats_y;

  int diffusion_steps() const { return static_cast<int>(betas.size()); }
  const ParamStore<float>& generator(Direction d) const { return d == Direction::x2y ? g_xy : g_yx; }
  const SpeakerStats& stats(Direction source) const { return source == Direction::x2y ? stats_x : stats_y; }

  friend bool operator==(const TrainState& a, const TrainState& b) {
    return a.gen_spec == b.gen_spec && a.disc_spec == b.disc_spec && a.betas == b.betas && a.g_xy == b.g_xy &&
           a.g_yx == b.g_yx && a.d_x == b.d_x && a.d_y == b.d_y && a.opt_g_xy == b.opt_g_xy &&
           a.opt_g_yx == b.opt_g_yx && a.opt_d_x == b.opt_d_x && a.opt_d_y == b.opt_d_y && a.step == b.step &&
           a.rng_data == b.rng_data && a.rng_diffusion == b.rng_diffusion && a.rng_latent == b.rng_latent &&
           a.stats_x == b.stats_x && a.stats_y == b.stats_y;
  }
};

inline TrainState init_train_state(const GeneratorSpec& gs, const DiscriminatorSpec& ds, const DiffusionSchedule& sched,
                                   const TrainConfig& cfg, SpeakerStats stats_x, SpeakerStats stats_y) {
  cfg.validate();
  require<InvalidArgument>(gs.feature_dim == ds.feature_dim, "generator and discriminator disagree on feature_dim");
  require<InvalidArgument>(stats_x.mcep_mean.size() == static_cast<std::size_t>(gs.feature_dim) &&
                               stats_y.mcep_mean.size() == static_cast<std::size_t>(gs.feature_dim),
                           "speaker statistics do not match feature_dim");
  TrainState s;
  s.gen_spec = gs;
  s.disc_spec = ds;
  s.betas = sched.betas();
  Rng init = Rng::stream(cfg.seed, "init");
  const ConvGenerator<float> gen(gs);
  const PatchDiscriminator<float> disc(ds);
  s.g_xy = gen.init(init);
  s.g_yx = gen.init(init);
  s.d_x = disc.init(init);
  s.d_y = disc.init(init);
  s.opt_g_xy = Moments<float>::zeros_like(s.g_xy);
  s.opt_g_yx = Moments<float>::zeros_like(s.g_yx);
  s.opt_d_x = Moments<float>::zeros_like(s.d_x);
  s.opt_d_y = Moments<float>::zeros_like(s.d_y);
  s.rng_data = Rng::stream(cfg.seed, "data");
  s.rng_diffusion = Rng::stream(cfg.seed, "diffusion");
  s.rng_latent = Rng::stream(cfg.seed, "latent");
  s.stats_x = std::move(stats_x);
  s.stats_y = std::move(stats_y);
  return s;
}

/// Random fixed-length crops from normalized [Q, T] utterances.
inline std::vector<Tensor<float>> sample_crops(const std::vector<Tensor<float>>& utts, int batch, int frames, Rng& rng) {
  require<InvalidArgument>(!utts.empty(), "cannot crop from an empty corpus");
  std::vector<Tensor<float>> out;
  for (int b = 0; b < batch; ++b) {
    const Tensor<float>& u = utts[rng.uniform_int(0, static_cast<int>(utts.size()) - 1)];
    require<ShapeError>(u.dim(1) >= frames, "utterance shorter than the crop length");
    const int q = u.dim(0), start = rng.uniform_int(0, u.dim(1) - frames);
    Tensor<float> c({q, frames});
    for (int d = 0; d < q; ++d)
      for (int t = 0; t < frames; ++t) c(d, t) = u(d, start + t);
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline void check_finite_loss(double v, const char* name, Direction dir, long step) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + name + " (direction " + direction_name(dir) + ", step " +
                       std::to_string(step) + ")");
}

// Fake-pair draws shared by the discriminator and generator updates.
struct FakeDraw {
  Tensor<float> x_t;
  Tensor<float> z;
  Tensor<float> eps;  // posterior noise
};

}  // namespace detail

/// One optimization step over both directions. Discriminators are updated
/// first on fresh real/fake pairs, then both generators jointly on the
/// adversarial, cycle and identity terms. Batches hold normalized crops.
inline std::array<LossReport, 2> train_step(TrainState& st, const TrainConfig& cfg, const DiffusionSchedule& sched,
                                            const std::vector<Tensor<float>>& batch_x,
                                            const std::vector<Tensor<float>>& batch_y) {
  require<InvalidArgument>(sched.steps() == st.diffusion_steps(), "schedule does not match the training state");
  require<InvalidArgument>(!batch_x.empty() && !batch_y.empty() && batch_x.size() == batch_y.size(),
                           "train_step: batches must be non-empty and equal in size");
  const Shape shape = batch_x.front().shape();
  require<ShapeError>(shape.size() == 2 && shape[0] == st.gen_spec.feature_dim, "train_step: crops must be [Q, T]");
  for (const auto* batch : {&batch_x, &batch_y})
    for (const auto& c : *batch) require<ShapeError>(c.shape() == shape, "train_step: crops differ in shape");

  const ConvGenerator<float> gen(st.gen_spec);
  const PatchDiscriminator<float> disc(st.disc_spec);
  const int n_steps = sched.steps(), batch = static_cast<int>(batch_x.size());
  const Shape zshape{1, st.gen_spec.latent_dim};
  const float inv_b = 1.0f / static_cast<float>(batch);

  struct Dir {
    Direction dir;
    const std::vector<Tensor<float>>* src;
    const std::vector<Tensor<float>>* tgt;
    ParamStore<float>* g;
    ParamStore<float>* g_rev;
    ParamStore<float>* d;
    Moments<float>* opt_d;
    int t = 0;
    std::vector<detail::FakeDraw> fakes;
  };
  std::array<Dir, 2> dirs{Dir{Direction::x2y, &batch_x, &batch_y, &st.g_xy, &st.g_yx, &st.d_y, &st.opt_d_y, 0, {}},
                          Dir{Direction::y2x, &batch_y, &batch_x, &st.g_yx, &st.g_xy, &st.d_x, &st.opt_d_x, 0, {}}};
  std::array<LossReport, 2> reports{};

  // Discriminator updates.
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    Dir& dr = dirs[k];
    LossReport& rep = reports[k];
    dr.t = st.rng_diffusion.uniform_int(1, n_steps);
    rep.t_sampled = dr.t;
    const int t = dr.t;
    ParamStore<float> grads = dr.d->zeros_like();
    for (int i = 0; i < batch; ++i) {
      const Tensor<float>& y0 = (*dr.tgt)[i];
      // Real pair by ancestral sampling: y_{t-1} ~ q(.|y_0), y_t ~ q(.|y_{t-1}).
      Tensor<float> y_prev = t > 1 ? forward_marginal_sample(y0, t - 1, sched, st.rng_diffusion) : y0;
      Tensor<float> y_t = forward_step_sample(y_prev, t, sched, st.rng_diffusion);
      // Fake pair: diffuse the source, predict the clean target, re-noise through the posterior.
      detail::FakeDraw fd;
      fd.x_t = forward_marginal_sample((*dr.src)[i], t, sched, st.rng_diffusion);
      fd.z = st.rng_latent.normal_tensor<float>(zshape);
      fd.eps = st.rng_diffusion.normal_tensor<float>(shape);
      const Tensor<float> y0_hat = gen(*dr.g, fd.x_t, fd.z, t);
      const Tensor<float> y_prev_hat = posterior_sample(y0_hat, fd.x_t, t, sched, fd.eps);

      Graph<float> g;
      Bound<float> p = bind(g, *dr.d, true);
      Var l_real = loss::neg_log(g, disc.forward(g, p, g.input(y_prev), g.input(y_t), t));
      Var l_fake = loss::neg_log1m(g, disc.forward(g, p, g.input(y_prev_hat), g.input(fd.x_t), t));
      Var l = op::add(g, l_real, l_fake);
      g.backward(l);
      accumulate_grads(g, p, grads, inv_b);
      rep.d_loss_real += g.value(l_real)[0] / batch;
      rep.d_loss_fake += g.value(l_fake)[0] / batch;
      dr.fakes.push_back(std::move(fd));
    }
    rep.total_d = rep.d_loss_real + rep.d_loss_fake;
    detail::check_finite_loss(rep.total_d, "discriminator loss", dr.dir, st.step);
    optimizer_step(*dr.d, grads, *dr.opt_d, cfg.optimizer_config(cfg.lr_d));
  }

  // Joint generator update.
  const double lambda_id = cfg.identity_weight(st.step);
  ParamStore<float> grad_xy = st.g_xy.zeros_like(), grad_yx = st.g_yx.zeros_like();
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    Dir& dr = dirs[k];
    LossReport& rep = reports[k];
    const int t = dr.t;
    const auto [c0, ct] = sched.posterior_coefs(t);
    const double sd = std::sqrt(sched.posterior_var(t));
    ParamStore<float>& grad_g = dr.dir == Direction::x2y ? grad_xy : grad_yx;
    ParamStore<float>& grad_rev = dr.dir == Direction::x2y ? grad_yx : grad_xy;
    for (int i = 0; i < batch; ++i) {
      const detail::FakeDraw& fd = dr.fakes[i];
      const int t_cyc = st.rng_diffusion.uniform_int(1, n_steps);
      const Tensor<float> eps_cyc = st.rng_diffusion.normal_tensor<float>(shape);
      const Tensor<float> z_cyc = st.rng_latent.normal_tensor<float>(zshape);

      Graph<float> g;
      Bound<float> pg = bind(g, *dr.g, true);
      Bound<float> prev = bind(g, *dr.g_rev, true);
      Bound<float> pd = bind(g, *dr.d, false);
      Var x_t = g.input(fd.x_t);
      Var y0_hat = gen.forward(g, pg, x_t, g.input(fd.z), t);
      // y_{t-1} = c0 * y0_hat + (ct * x_t + sd * eps)
      Tensor<float> rest(shape);
      for (std::size_t e = 0; e < rest.size(); ++e)
        rest[e] = static_cast<float>(ct * fd.x_t[e] + sd * fd.eps[e]);
      Var y_prev_hat = op::lincomb(g, static_cast<float>(c0), y0_hat, 1.0f, g.input(std::move(rest)));
      Var l_adv = loss::generator_adv(g, disc.forward(g, pd, y_prev_hat, x_t, t));

      Var y_cyc_t = op::lincomb(g, static_cast<float>(std::sqrt(sched.alpha_bar(t_cyc))), y0_hat,
                                static_cast<float>(std::sqrt(sched.one_minus_alpha_bar(t_cyc))), g.input(eps_cyc));
      Var x_rec = gen.forward(g, prev, y_cyc_t, g.input(z_cyc), t_cyc);
      Var l_cyc = loss::l1(g, x_rec, g.input((*dr.src)[i]));

      std::vector<std::pair<float, Var>> terms{{1.0f, l_adv}, {static_cast<float>(cfg.lambda_cycle), l_cyc}};
      Var l_id{};
      if (lambda_id > 0.0) {
        const int t_id = st.rng_diffusion.uniform_int(1, n_steps);
        const Tensor<float> y_id_t = forward_marginal_sample((*dr.tgt)[i], t_id, sched, st.rng_diffusion);
        const Tensor<float> z_id = st.rng_latent.normal_tensor<float>(zshape);
        Var y_id = gen.forward(g, pg, g.input(y_id_t), g.input(z_id), t_id);
        l_id = loss::l1(g, y_id, g.input((*dr.tgt)[i]));
        terms.push_back({static_cast<float>(lambda_id), l_id});
      }
      Var total = op::weighted_sum(g, terms);
      g.backward(total);
      accumulate_grads(g, pg, grad_g, inv_b);
      accumulate_grads(g, prev, grad_rev, inv_b);
      rep.g_adv += g.value(l_adv)[0] / batch;
      rep.g_cyc += g.value(l_cyc)[0] / batch;
      if (l_id.valid()) rep.g_id += g.value(l_id)[0] / batch;
    }
    rep.total_g = rep.g_adv + cfg.lambda_cycle * rep.g_cyc + lambda_id * rep.g_id;
    detail::check_finite_loss(rep.g_adv, "g_adv", dr.dir, st.step);
    detail::check_finite_loss(rep.g_cyc, "g_cyc", dr.dir, st.step);
    detail::check_finite_loss(rep.g_id, "g_id", dr.dir, st.step);
  }
  const OptimizerConfig og = cfg.optimizer_config(cfg.lr_g);
  optimizer_step(st.g_xy, grad_xy, st.opt_g_xy, og);
  optimizer_step(st.g_yx, grad_yx, st.opt_g_yx, og);
  ++st.step;
  return reports;
}

struct TrainHooks {
  std::function<void(const TrainState&, const std::array<LossReport, 2>&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Normalized mcep matrices of a corpus.
inline std::vector<Tensor<float>> normalized_corpus(const std::vector<FeatureSequence>& corpus, const SpeakerStats& s) {
  std::vector<Tensor<float>> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus) out.push_back(normalize_mcep(u.mcep, s));
  return out;
}

/// Runs train_step until cfg.iterations, starting from `state` (fresh or
/// restored). Checkpoints every cfg.checkpoint_every steps and at the end; with
/// zero remaining iterations only the final (initial) checkpoint is emitted.
inline TrainState train_loop(const TrainConfig& cfg, TrainState state, const std::vector<FeatureSequence>& corpus_x,
                             const std::vector<FeatureSequence>& corpus_y, const DiffusionSchedule& sched,
                             const TrainHooks& hooks = {}) {
  cfg.validate();
  require<InvalidArgument>(!corpus_x.empty() && !corpus_y.empty(), "training corpora must be non-empty");
  require<InvalidArgument>(state.step <= cfg.iterations, "state is already past the configured iterations");
  const auto norm_x = normalized_corpus(corpus_x, state.stats_x);
  const auto norm_y = normalized_corpus(corpus_y, state.stats_y);
  while (state.step < cfg.iterations) {
    const auto bx = sample_crops(norm_x, cfg.batch_size, cfg.crop_frames, state.rng_data);
    const auto by = sample_crops(norm_y, cfg.batch_size, cfg.crop_frames, state.rng_data);
    const auto reports = train_step(state, cfg, sched, bx, by);
    if (hooks.on_step) hooks.on_step(state, reports);
    if (state.step % cfg.checkpoint_every == 0 && state.step < cfg.iterations && hooks.on_checkpoint)
      hooks.on_checkpoint(state);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  return state;
}

// ------------------------------------------------------------------ conversion

struct ConvertOptions {
  int n_samples = 1;
  int start_step = 0;  // diffusion level the source is lifted to; 0 picks default_start_step()
};

/// Deepest level whose marginal still keeps more signal than noise
/// (alpha_bar_t >= 1/2), at least 1. Lifting the source all the way to
/// T_diff leaves sqrt(alpha_bar_T) <= 0.1 of it, too little to carry content.
inline int default_start_step(const DiffusionSchedule& sched) {
  int t = 1;
  for (int u = 1; u <= sched.steps(); ++u)
    if (sched.alpha_bar(u) >= 0.5) t = u;
  return t;
}

/// Converts one utterance: normalize with the source speaker's statistics,
/// diffuse to the start level through the closed-form marginal, run the
/// reverse chain with the direction's generator (fresh z at every step), then
/// denormalize with the target statistics. log-F0 goes through the
/// log-Gaussian transform; voicing and aperiodicity are copied from the source.
inline std::vector<FeatureSequence> convert(const FeatureSequence& src, Direction dir, const TrainState& model,
                                            const DiffusionSchedule& sched, Rng& rng, ConvertOptions opt = {}) {
  if (sched.steps() != model.diffusion_steps())
    throw CheckpointError("checkpoint was trained with " + std::to_string(model.diffusion_steps()) +
                          " diffusion steps, schedule has " + std::to_string(sched.steps()));
  require<InvalidArgument>(opt.n_samples >= 1, "n_samples must be at least 1");
  const int start = opt.start_step == 0 ? default_start_step(sched) : opt.start_step;
  sched.check_step(start);
  src.validate();
  require<ShapeError>(src.dim() == model.gen_spec.feature_dim, "source feature dimension does not match the model");

  const SpeakerStats& s_src = model.stats(dir);
  const SpeakerStats& s_tgt = model.stats(reverse(dir));
  const ConvGenerator<float> gen(model.gen_spec);
  const ParamStore<float>& params = model.generator(dir);
  auto g = [&](const Tensor<float>& x, const Tensor<float>& z, int t) { return gen(params, x, z, t); };

  // Pad time by edge replication to a multiple of the downsample factor.
  const int q = src.dim(), len = src.frames(), f = model.gen_spec.downsample_factor;
  const int padded = (len + f - 1) / f * f;
  const Tensor<float> norm = normalize_mcep(src.mcep, s_src);
  Tensor<float> x0({q, padded});
  for (int d = 0; d < q; ++d)
    for (int t = 0; t < padded; ++t) x0(d, t) = norm(d, std::min(t, len - 1));

  const std::vector<float> lf0 = convert_logf0<float>(src.logf0, src.voiced, s_src, s_tgt);
  std::vector<FeatureSequence> out;
  for (int k = 0; k < opt.n_samples; ++k) {
    Tensor<float> x = forward_marginal_sample(x0, start, sched, rng);
    for (int t = start; t >= 1; --t) {
      const Tensor<float> z = rng.normal_tensor<float>({1, model.gen_spec.latent_dim});
      x = denoise_step(x, t, g, z, sched, rng).x_prev;
    }
    Tensor<float> cropped({q, len});
    for (int d = 0; d < q; ++d)
      for (int t = 0; t < len; ++t) cropped(d, t) = x(d, t);
    FeatureSequence seq = src;
    seq.mcep = denormalize_mcep(cropped, s_tgt);
    seq.logf0 = lf0;
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace dgvc
