#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/error.hpp"
#include "dgvc/features.hpp"
#include "dgvc/rng.hpp"

namespace dgvc {

/// 10 / ln 10 * sqrt(2): dB scale factor of mel-cepstral distortion.
inline const double kMcdScale = 10.0 / std::numbers::ln10 * std::numbers::sqrt2;

/// Mel-cepstral distortion in dB between two aligned [Q, T] mcep matrices:
/// per frame (10/ln10) sqrt(2 sum_{d>=1} (a_d - b_d)^2), averaged over frames.
/// Coefficient 0 (energy) is excluded.
inline double mcd(const Tensor<float>& ref, const Tensor<float>& conv) {
  require<ShapeError>(ref.rank() == 2 && conv.rank() == 2, "mcd: inputs must be [Q, T]");
  require<ShapeError>(ref.dim(0) == conv.dim(0), "mcd: feature dimension mismatch");
  require<ShapeError>(ref.dim(1) == conv.dim(1), "mcd: frame count mismatch " + std::to_string(ref.dim(1)) + " vs " +
                                                     std::to_string(conv.dim(1)) + " (sequences must be aligned)");
  require<ShapeError>(ref.dim(1) > 0, "mcd: empty sequence");
  const int q = ref.dim(0), n = ref.dim(1);
  std::vector<double> acc(n, 0.0);
  for (int d = 1; d < q; ++d)
    for (int t = 0; t < n; ++t) {
      const double diff = static_cast<double>(ref(d, t)) - static_cast<double>(conv(d, t));
      acc[t] += diff * diff;
    }
  double total = 0.0;
  for (double a : acc) total += kMcdScale * std::sqrt(a);
  return total / n;
}

inline double mcd(const FeatureSequence& ref, const FeatureSequence& conv) { return mcd(ref.mcep, conv.mcep); }

/// Mean pairwise distance between conversions of one source: for each pair,
/// the Euclidean distance of the full mcep frames averaged over frames.
inline double diversity(std::span<const FeatureSequence> conversions) {
  require<InvalidArgument>(conversions.size() >= 2, "diversity needs at least two conversions");
  const Shape& s = conversions[0].mcep.shape();
  for (const auto& c : conversions) require<ShapeError>(c.mcep.shape() == s, "diversity: conversions differ in shape");
  const int q = s[0], n = s[1];
  double total = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < conversions.size(); ++i)
    for (std::size_t j = i + 1; j < conversions.size(); ++j) {
      double frames = 0.0;
      for (int t = 0; t < n; ++t) {
        double ss = 0.0;
        for (int d = 0; d < q; ++d) {
          const double diff = static_cast<double>(conversions[i].mcep(d, t)) - conversions[j].mcep(d, t);
          ss += diff * diff;
        }
        frames += std::sqrt(ss);
      }
      total += frames / n;
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

/// Per-direction objective evaluation.
struct EvalReport {
  std::string direction;
  std::string method = "dgvc";
  double mcd_mean = 0.0;  // mean of per-utterance frame-averaged MCD
  double mcd_stderr = 0.0;
  std::vector<double> mcd_per_utterance;
  long n_frames = 0;
  double diversity = 0.0;  // 0 when only one sample per source was drawn
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, direction, method, mcd_mean, mcd_stderr, mcd_per_utterance, n_frames,
                                   diversity)

/// MCD statistics over aligned (reference, converted) utterance pairs.
inline EvalReport evaluate_pairs(std::span<const FeatureSequence> refs, std::span<const FeatureSequence> convs,
                                 std::string direction, std::string method = "dgvc") {
  require<InvalidArgument>(!refs.empty() && refs.size() == convs.size(), "evaluate: need equal, non-empty sets");
  EvalReport r;
  r.direction = std::move(direction);
  r.method = std::move(method);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    r.mcd_per_utterance.push_back(mcd(refs[i], convs[i]));
    r.n_frames += refs[i].frames();
  }
  const double n = static_cast<double>(r.mcd_per_utterance.size());
  for (double v : r.mcd_per_utterance) r.mcd_mean += v / n;
  if (n > 1) {
    double ss = 0.0;
    for (double v : r.mcd_per_utterance) ss += (v - r.mcd_mean) * (v - r.mcd_mean);
    r.mcd_stderr = std::sqrt(ss / (n - 1)) / std::sqrt(n);
  }
  return r;
}

/// Rows by method, columns per direction, like a results table.
inline void write_eval_csv(std::ostream& os, std::span<const EvalReport> reports) {
  os << "method,direction,mcd_mean_db,mcd_stderr_db,n_utterances,n_frames,diversity\n";
  os.precision(6);
  for (const auto& r : reports)
    os << r.method << ',' << r.direction << ',' << std::fixed << r.mcd_mean << ',' << r.mcd_stderr << ','
       << r.mcd_per_utterance.size() << ',' << r.n_frames << ',' << r.diversity << '\n';
}

// ------------------------------------------------------------------ mode coverage

struct MixtureSpec {
  std::vector<double> means;
  std::vector<double> stds;
  std::vector<double> weights;

  void validate() const {
    require<InvalidArgument>(means.size() == 2 && stds.size() == 2 && weights.size() == 2,
                             "mode coverage expects a two-component mixture");
    for (double s : stds) require<InvalidArgument>(s > 0.0, "mixture std must be positive");
    require<InvalidArgument>(weights[0] > 0.0 && weights[1] > 0.0, "mixture weights must be positive");
  }

  double sample(Rng& rng) const {
    const double w0 = weights[0] / (weights[0] + weights[1]);
    const int k = rng.uniform() < w0 ? 0 : 1;
    return means[k] + stds[k] * rng.normal();
  }
};

struct ModeCoverage {
  bool pass = false;
  std::vector<long> component_counts;
  std::vector<double> component_fractions;
  std::vector<double> bin_edges;  // histogram over [min mean - 4 sd, max mean + 4 sd]
  std::vector<long> bin_counts;
  long outside = 0;  // draws beyond the histogram range
};

/// Draws n samples and assigns each to the nearest mixture mean. Passes when
/// every component receives between 30% and 70% of the draws.
inline ModeCoverage mode_coverage_test(const std::function<std::vector<double>(int)>& sampler, const MixtureSpec& spec,
                                       int n_draws, int n_bins = 40) {
  spec.validate();
  require<InvalidArgument>(n_draws > 0 && n_bins > 0, "mode coverage: need positive draws and bins");
  const std::vector<double> draws = sampler(n_draws);
  require<InvalidArgument>(draws.size() == static_cast<std::size_t>(n_draws), "sampler returned the wrong count");
  ModeCoverage r;
  r.component_counts.assign(2, 0);
  const double lo = std::min(spec.means[0] - 4 * spec.stds[0], spec.means[1] - 4 * spec.stds[1]);
  const double hi = std::max(spec.means[0] + 4 * spec.stds[0], spec.means[1] + 4 * spec.stds[1]);
  r.bin_counts.assign(n_bins, 0);
  for (int b = 0; b <= n_bins; ++b) r.bin_edges.push_back(lo + (hi - lo) * b / n_bins);
  for (double x : draws) {
    require<NumericError>(std::isfinite(x), "sampler produced a non-finite draw");
    r.component_counts[std::abs(x - spec.means[0]) <= std::abs(x - spec.means[1]) ? 0 : 1]++;
    if (x < lo || x >= hi) {
      ++r.outside;
      continue;
    }
    r.bin_counts[std::min(n_bins - 1, static_cast<int>((x - lo) / (hi - lo) * n_bins))]++;
  }
  r.pass = true;
  for (long c : r.component_counts) {
    const double f = static_cast<double>(c) / n_draws;
    r.component_fractions.push_back(f);
    r.pass = r.pass && f >= 0.3 && f <= 0.7;
  }
  return r;
}

}  // namespace dgvc
