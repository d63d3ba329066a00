#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/error.hpp"
#include "dgvc/features.hpp"
#include "dgvc/rng.hpp"

namespace dgvc {

/// A synthetic voice: per-dimension affine shift plus a smooth monotone warp
/// u -> u + warp_d * tanh(u) of the shared spectral content, and a log-F0
/// register.
struct SpeakerVoice {
  std::uint64_t seed = 1;
  double warp = 0.6;      // strength of the nonlinear part
  double shift = 0.5;     // spread of per-dimension offsets
  double f0_hz = 120.0;   // median F0
  double f0_spread = 0.15;  // log-F0 excursion per unit intonation

  friend bool operator==(const SpeakerVoice&, const SpeakerVoice&) = default;
};

struct CorpusConfig {
  int feature_dim = 35;
  int n_train = 32;    // per speaker, non-parallel
  int n_heldout = 8;   // per speaker, parallel with the other speaker
  int min_frames = 96;
  int max_frames = 160;
  int content_dim = 4;          // latent trajectories shared by both speakers
  int content_partials = 6;     // sinusoids per trajectory
  double max_cycles_per_frame = 0.04;
  int ap_bands = 5;             // aperiodicity bytes per frame
  SpeakerVoice speaker_x{11, 0.6, 0.5, 120.0, 0.15};
  SpeakerVoice speaker_y{23, 0.6, 0.5, 220.0, 0.20};

  void validate() const {
    require<InvalidArgument>(feature_dim >= 2 && n_train >= 1 && n_heldout >= 0 && min_frames >= 1 &&
                                 min_frames <= max_frames && content_dim >= 1 && content_partials >= 1 &&
                                 max_cycles_per_frame > 0.0 && max_cycles_per_frame <= 0.5 && ap_bands >= 0,
                             "corpus config: out-of-range field");
    require<InvalidArgument>(!(speaker_x == speaker_y), "corpus config: the two speakers are identical");
    for (const auto* v : {&speaker_x, &speaker_y})
      require<InvalidArgument>(v->warp > -1.0 && v->f0_hz > 0.0 && v->f0_spread > 0.0,
                               "corpus config: warp must exceed -1 and F0 parameters must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SpeakerVoice, seed, warp, shift, f0_hz, f0_spread)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CorpusConfig, feature_dim, n_train, n_heldout, min_frames, max_frames, content_dim,
                                   content_partials, max_cycles_per_frame, ap_bands, speaker_x, speaker_y)

/// Per-dimension rendering parameters of one voice.
struct VoiceRender {
  std::vector<double> scale, offset, warp;
  double log_f0 = 0.0, f0_spread = 0.0;

  static VoiceRender from(const SpeakerVoice& v, int q) {
    Rng rng = Rng::stream(v.seed, "voice");
    VoiceRender r;
    r.scale.resize(q);
    r.offset.resize(q);
    r.warp.resize(q);
    for (int d = 0; d < q; ++d) {
      // Cepstral magnitudes decay with quefrency.
      const double decay = 1.0 / (1.0 + 0.3 * d);
      r.scale[d] = decay * std::exp(0.25 * rng.normal());
      r.offset[d] = (d == 0 ? -3.0 : 0.0) + decay * v.shift * rng.normal();
      r.warp[d] = v.warp * (0.5 + 0.5 * rng.uniform());
    }
    r.log_f0 = std::log(v.f0_hz);
    r.f0_spread = v.f0_spread;
    return r;
  }

  double render(int d, double u) const { return offset[d] + scale[d] * (u + warp[d] * std::tanh(u)); }

  /// Inverse of render() for dimension d (bisection on the monotone warp).
  double content_of(int d, double value) const {
    const double w = (value - offset[d]) / scale[d];
    // u + k tanh(u) = w with k > -1: the root lies within |w| + |k| of zero.
    double lo = w - std::abs(warp[d]) - 1.0, hi = w + std::abs(warp[d]) + 1.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid + warp[d] * std::tanh(mid) < w) lo = mid; else hi = mid;
      if (hi - lo < 1e-15 * std::max(1.0, std::abs(mid))) break;
    }
    return 0.5 * (lo + hi);
  }
};

/// Latent content of one utterance, shared by both renditions.
struct Content {
  std::vector<std::vector<double>> envelope;  // [Q][T] before any voice is applied
  std::vector<double> intonation;             // [T], unit scale
  std::vector<std::uint8_t> voiced;
  std::vector<std::uint8_t> ap;
};

/// Maps a source-speaker rendition to the exact target-speaker rendition of
/// the same content. Aperiodicity and voicing pass through from the source.
class OracleMap {
 public:
  OracleMap() = default;
  OracleMap(const CorpusConfig& cfg)
      : x_(VoiceRender::from(cfg.speaker_x, cfg.feature_dim)), y_(VoiceRender::from(cfg.speaker_y, cfg.feature_dim)) {}

  FeatureSequence apply(const FeatureSequence& src, Direction dir) const {
    src.validate();
    const VoiceRender& from = dir == Direction::x2y ? x_ : y_;
    const VoiceRender& to = dir == Direction::x2y ? y_ : x_;
    require<ShapeError>(static_cast<std::size_t>(src.dim()) == from.scale.size(), "oracle: feature dimension mismatch");
    FeatureSequence out = src;
    for (int d = 0; d < src.dim(); ++d)
      for (int t = 0; t < src.frames(); ++t)
        out.mcep(d, t) = static_cast<float>(to.render(d, from.content_of(d, src.mcep(d, t))));
    for (int t = 0; t < src.frames(); ++t)
      if (src.voiced[t])
        out.logf0[t] = static_cast<float>(to.log_f0 + to.f0_spread * (src.logf0[t] - from.log_f0) / from.f0_spread);
    return out;
  }

  const VoiceRender& voice(Direction source) const { return source == Direction::x2y ? x_ : y_; }

 private:
  VoiceRender x_, y_;
};

struct SyntheticCorpus {
  std::vector<FeatureSequence> train_x, train_y;      // disjoint content
  std::vector<FeatureSequence> heldout_x, heldout_y;  // parallel: same content per index
  OracleMap oracle;
};

namespace detail {

// Sum of random low-frequency partials, scaled to unit RMS.
inline std::vector<double> band_limited(Rng& rng, int frames, int partials, double max_cycles) {
  std::vector<double> amp(partials), freq(partials), phase(partials);
  for (int j = 0; j < partials; ++j) {
    amp[j] = rng.normal();
    freq[j] = max_cycles * (0.1 + 0.9 * rng.uniform());
    phase[j] = 2.0 * std::numbers::pi * rng.uniform();
  }
  std::vector<double> x(frames, 0.0);
  for (int t = 0; t < frames; ++t)
    for (int j = 0; j < partials; ++j) x[t] += amp[j] * std::sin(2.0 * std::numbers::pi * freq[j] * t + phase[j]);
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double rms = std::sqrt(ss / frames);
  if (rms > 0.0)
    for (double& v : x) v /= rms;
  return x;
}

inline Content make_content(const CorpusConfig& cfg, const std::vector<std::vector<double>>& mixing, Rng& rng) {
  const int frames = rng.uniform_int(cfg.min_frames, cfg.max_frames);
  std::vector<std::vector<double>> latent(cfg.content_dim);
  for (auto& c : latent) c = band_limited(rng, frames, cfg.content_partials, cfg.max_cycles_per_frame);
  Content c;
  c.envelope.assign(cfg.feature_dim, std::vector<double>(frames, 0.0));
  for (int d = 0; d < cfg.feature_dim; ++d)
    for (int k = 0; k < cfg.content_dim; ++k)
      for (int t = 0; t < frames; ++t) c.envelope[d][t] += mixing[d][k] * latent[k][t];
  c.intonation = band_limited(rng, frames, cfg.content_partials, cfg.max_cycles_per_frame);
  c.voiced.resize(frames);
  for (int t = 0; t < frames; ++t) c.voiced[t] = latent[0][t] > -0.8 ? 1 : 0;
  c.ap.resize(static_cast<std::size_t>(frames) * cfg.ap_bands);
  for (auto& b : c.ap) b = static_cast<std::uint8_t>(rng.next_u64() & 0xff);
  return c;
}

inline FeatureSequence render(const Content& c, const VoiceRender& v) {
  const int q = static_cast<int>(c.envelope.size()), frames = static_cast<int>(c.intonation.size());
  FeatureSequence s;
  s.mcep = Tensor<float>({q, frames});
  for (int d = 0; d < q; ++d)
    for (int t = 0; t < frames; ++t) s.mcep(d, t) = static_cast<float>(v.render(d, c.envelope[d][t]));
  s.logf0.resize(frames);
  for (int t = 0; t < frames; ++t)
    s.logf0[t] = c.voiced[t] ? static_cast<float>(v.log_f0 + v.f0_spread * c.intonation[t]) : kUnvoicedLogF0;
  s.voiced = c.voiced;
  s.ap = c.ap;
  return s;
}

}  // namespace detail

/// Two synthetic speakers rendering shared smooth content. Training
/// utterances are non-parallel; held-out utterances are parallel so the
/// exact conversion target of every held-out source is known.
inline SyntheticCorpus make_synthetic_corpus(const CorpusConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<std::vector<double>> mixing(cfg.feature_dim, std::vector<double>(cfg.content_dim));
  for (auto& row : mixing)
    for (double& m : row) m = rng.normal() / std::sqrt(static_cast<double>(cfg.content_dim));
  const VoiceRender vx = VoiceRender::from(cfg.speaker_x, cfg.feature_dim);
  const VoiceRender vy = VoiceRender::from(cfg.speaker_y, cfg.feature_dim);
  SyntheticCorpus corpus;
  corpus.oracle = OracleMap(cfg);
  for (int i = 0; i < cfg.n_train; ++i) corpus.train_x.push_back(detail::render(detail::make_content(cfg, mixing, rng), vx));
  for (int i = 0; i < cfg.n_train; ++i) corpus.train_y.push_back(detail::render(detail::make_content(cfg, mixing, rng), vy));
  for (int i = 0; i < cfg.n_heldout; ++i) {
    const Content c = detail::make_content(cfg, mixing, rng);
    corpus.heldout_x.push_back(detail::render(c, vx));
    corpus.heldout_y.push_back(detail::render(c, vy));
  }
  return corpus;
}

}  // namespace dgvc
