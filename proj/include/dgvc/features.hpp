#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dgvc/error.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

/// Conversion direction between the two speakers of a pair.
enum class Direction { x2y, y2x };

inline Direction parse_direction(const std::string& s) {
  if (s == "x2y") return Direction::x2y;
  if (s == "y2x") return Direction::y2x;
  throw InvalidArgument("direction must be x2y or y2x, got '" + s + "'");
}
inline const char* direction_name(Direction d) { return d == Direction::x2y ? "x2y" : "y2x"; }
inline Direction reverse(Direction d) { return d == Direction::x2y ? Direction::y2x : Direction::x2y; }

/// log-F0 value stored on unvoiced frames. Finite so the payload stays
/// finite, far outside any voiced range so it is never mistaken for speech.
inline constexpr float kUnvoicedLogF0 = -1.0e10f;

/// One utterance worth of vocoder features.
struct FeatureSequence {
  Tensor<float> mcep;                // [Q, frames], row-major
  std::vector<float> logf0;          // per frame
  std::vector<std::uint8_t> voiced;  // per frame, 0 or 1
  std::vector<std::uint8_t> ap;      // aperiodicity payload, carried as opaque bytes
  double frame_rate = 200.0;         // frames per second (5 ms hop)
  std::uint32_t sample_rate = 16000;

  int dim() const { return mcep.rank() == 2 ? mcep.dim(0) : 0; }
  int frames() const { return mcep.rank() == 2 ? mcep.dim(1) : 0; }

  void validate() const {
    require<ShapeError>(mcep.rank() == 2 && dim() > 0 && frames() > 0, "feature sequence needs a non-empty [Q, T] mcep");
    const auto n = static_cast<std::size_t>(frames());
    require<ShapeError>(logf0.size() == n && voiced.size() == n, "logf0/voiced length differs from mcep frames");
    require<FormatError>(mcep.all_finite(), "mcep contains non-finite values");
    for (std::size_t i = 0; i < n; ++i) {
      require<FormatError>(voiced[i] <= 1, "voiced mask must be 0/1");
      require<FormatError>(std::isfinite(logf0[i]), "logf0 contains non-finite values");
    }
    require<FormatError>(std::isfinite(frame_rate) && frame_rate > 0.0, "frame rate must be positive");
    require<FormatError>(sample_rate > 0 && frame_rate <= sample_rate, "sample rate must be positive and >= frame rate");
  }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

struct SpeakerStats {
  double logf0_mean = 0.0;
  double logf0_std = 1.0;
  std::vector<double> mcep_mean;
  std::vector<double> mcep_std;

  friend bool operator==(const SpeakerStats&, const SpeakerStats&) = default;
};

/// Speaker statistics with the population (1/N) variance convention.
/// log-F0 statistics use voiced frames only; mcep statistics use every frame.
inline SpeakerStats compute_speaker_stats(std::span<const FeatureSequence> corpus) {
  require<InvalidArgument>(!corpus.empty(), "speaker stats need at least one utterance");
  const int q = corpus.front().dim();
  // Welford accumulators.
  long nf = 0;
  double f_mean = 0.0, f_m2 = 0.0;
  long nm = 0;
  std::vector<double> m_mean(q, 0.0), m_m2(q, 0.0);
  for (const auto& seq : corpus) {
    seq.validate();
    require<ShapeError>(seq.dim() == q, "utterances disagree on feature dimension");
    for (int t = 0; t < seq.frames(); ++t) {
      ++nm;
      for (int d = 0; d < q; ++d) {
        const double x = seq.mcep(d, t);
        const double delta = x - m_mean[d];
        m_mean[d] += delta / nm;
        m_m2[d] += delta * (x - m_mean[d]);
      }
      if (!seq.voiced[t]) continue;
      ++nf;
      const double x = seq.logf0[t];
      const double delta = x - f_mean;
      f_mean += delta / nf;
      f_m2 += delta * (x - f_mean);
    }
  }
  require<InvalidArgument>(nf > 0, "corpus has no voiced frames");
  SpeakerStats s;
  s.logf0_mean = f_mean;
  s.logf0_std = std::sqrt(f_m2 / nf);
  require<InvalidArgument>(s.logf0_std > 0.0, "log-F0 standard deviation is zero");
  s.mcep_mean = m_mean;
  s.mcep_std.resize(q);
  for (int d = 0; d < q; ++d) {
    s.mcep_std[d] = std::sqrt(m_m2[d] / nm);
    require<InvalidArgument>(s.mcep_std[d] > 0.0, "mcep dimension " + std::to_string(d) + " has zero variance");
  }
  return s;
}

/// Log-Gaussian normalized F0 transform; unvoiced frames pass through.
template <class T>
std::vector<T> convert_logf0(std::span<const T> logf0, std::span<const std::uint8_t> voiced, const SpeakerStats& src,
                             const SpeakerStats& tgt) {
  require<ShapeError>(logf0.size() == voiced.size(), "convert_logf0: mask length mismatch");
  require<InvalidArgument>(src.logf0_std > 0.0, "convert_logf0: source log-F0 std must be positive");
  std::vector<T> out(logf0.begin(), logf0.end());
  const double ratio = tgt.logf0_std / src.logf0_std;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (voiced[i]) out[i] = static_cast<T>((static_cast<double>(logf0[i]) - src.logf0_mean) * ratio + tgt.logf0_mean);
  return out;
}

/// Per-dimension z-scoring of a [Q, T] mcep matrix.
inline Tensor<float> normalize_mcep(const Tensor<float>& mcep, const SpeakerStats& s) {
  require<ShapeError>(mcep.rank() == 2 && static_cast<std::size_t>(mcep.dim(0)) == s.mcep_mean.size() &&
                          s.mcep_std.size() == s.mcep_mean.size(),
                      "normalize_mcep: stats dimension mismatch");
  Tensor<float> out(mcep.shape());
  for (int d = 0; d < mcep.dim(0); ++d)
    for (int t = 0; t < mcep.dim(1); ++t)
      out(d, t) = static_cast<float>((mcep(d, t) - s.mcep_mean[d]) / s.mcep_std[d]);
  return out;
}

inline Tensor<float> denormalize_mcep(const Tensor<float>& norm, const SpeakerStats& s) {
  require<ShapeError>(norm.rank() == 2 && static_cast<std::size_t>(norm.dim(0)) == s.mcep_mean.size() &&
                          s.mcep_std.size() == s.mcep_mean.size(),
                      "denormalize_mcep: stats dimension mismatch");
  Tensor<float> out(norm.shape());
  for (int d = 0; d < norm.dim(0); ++d)
    for (int t = 0; t < norm.dim(1); ++t)
      out(d, t) = static_cast<float>(static_cast<double>(norm(d, t)) * s.mcep_std[d] + s.mcep_mean[d]);
  return out;
}

inline FeatureSequence normalize_mcep(const FeatureSequence& seq, const SpeakerStats& s) {
  FeatureSequence out = seq;
  out.mcep = normalize_mcep(seq.mcep, s);
  return out;
}

inline FeatureSequence denormalize_mcep(const FeatureSequence& seq, const SpeakerStats& s) {
  FeatureSequence out = seq;
  out.mcep = denormalize_mcep(seq.mcep, s);
  return out;
}

}  // namespace dgvc
