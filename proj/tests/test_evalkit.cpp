#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "dgvc/evalkit.hpp"

using namespace dgvc;

namespace {

double naive_mcd(const Tensor<float>& a, const Tensor<float>& b) {
  double total = 0;
  for (int t = 0; t < a.dim(1); ++t) {
    double ss = 0;
    for (int d = 1; d < a.dim(0); ++d) ss += std::pow(double(a(d, t)) - double(b(d, t)), 2);
    total += 10.0 / std::log(10.0) * std::sqrt(2.0 * ss);
  }
  return total / a.dim(1);
}

FeatureSequence seq_of(Tensor<float> m) {
  FeatureSequence s;
  s.mcep = std::move(m);
  s.logf0.assign(s.mcep.dim(1), 0.0f);
  s.voiced.assign(s.mcep.dim(1), 0);
  return s;
}

}  // namespace

TEST(Mcd, IdenticalInputsGiveZero) {
  Rng rng(51);
  const Tensor<float> a = rng.normal_tensor<float>({35, 10});
  EXPECT_EQ(mcd(a, a), 0.0);
}

TEST(Mcd, SingleFrameUnitDifference) {
  Tensor<float> a({35, 1}), b({35, 1});
  b(7, 0) = 1.0f;
  EXPECT_NEAR(mcd(a, b), 10.0 / std::log(10.0) * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(mcd(a, b), 6.1419, 1e-4);
  // The energy coefficient is excluded.
  Tensor<float> c({35, 1});
  c(0, 0) = 5.0f;
  EXPECT_EQ(mcd(a, c), 0.0);
}

TEST(Mcd, MatchesNaiveLoopOnRandomPairs) {
  Rng rng(52);
  for (int i = 0; i < 100; ++i) {
    const Tensor<float> a = rng.normal_tensor<float>({35, 10}), b = rng.normal_tensor<float>({35, 10});
    EXPECT_NEAR(mcd(a, b), naive_mcd(a, b), 1e-9);
  }
}

TEST(Mcd, SymmetricAndLinearInScale) {
  Rng rng(53);
  const Tensor<float> a = rng.normal_tensor<float>({8, 12}), b = rng.normal_tensor<float>({8, 12});
  EXPECT_NEAR(mcd(a, b), mcd(b, a), 1e-12);
  Tensor<float> b3 = b;
  for (std::size_t i = 0; i < b3.size(); ++i) b3[i] = a[i] + 3.0f * (b[i] - a[i]);
  EXPECT_NEAR(mcd(a, b3), 3.0 * mcd(a, b), 1e-5);
}

TEST(Mcd, LengthMismatchIsAnError) {
  EXPECT_THROW(mcd(Tensor<float>({35, 10}), Tensor<float>({35, 9})), ShapeError);
  EXPECT_THROW(mcd(Tensor<float>({35, 10}), Tensor<float>({34, 10})), ShapeError);
}

TEST(Diversity, Examples) {
  Rng rng(54);
  const Tensor<float> m = rng.normal_tensor<float>({35, 6});
  const std::vector<FeatureSequence> same{seq_of(m), seq_of(m), seq_of(m)};
  EXPECT_EQ(diversity(same), 0.0);
  // Constant matrices differing by c in every entry: frame distance c sqrt(Q).
  const std::vector<FeatureSequence> shifted{seq_of(Tensor<float>({35, 6}, 1.0f)), seq_of(Tensor<float>({35, 6}, 1.5f))};
  EXPECT_NEAR(diversity(shifted), 0.5 * std::sqrt(35.0), 1e-6);
  EXPECT_THROW(diversity(std::vector<FeatureSequence>{seq_of(m)}), InvalidArgument);
}

TEST(Diversity, MatchesBruteForceDoubleLoop) {
  Rng rng(55);
  std::vector<FeatureSequence> set;
  for (int i = 0; i < 4; ++i) set.push_back(seq_of(rng.normal_tensor<float>({5, 7})));
  double total = 0;
  int pairs = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (j <= i) continue;
      double frames = 0;
      for (int t = 0; t < 7; ++t) {
        double ss = 0;
        for (int d = 0; d < 5; ++d) ss += std::pow(double(set[i].mcep(d, t)) - set[j].mcep(d, t), 2);
        frames += std::sqrt(ss);
      }
      total += frames / 7;
      ++pairs;
    }
  EXPECT_NEAR(diversity(set), total / pairs, 1e-9);
}

TEST(EvalReport, AveragesPerUtteranceThenAcross) {
  Tensor<float> a({3, 2}), b({3, 2}), c({3, 4});
  b(1, 0) = 1.0f;  // one frame of two differs
  const std::vector<FeatureSequence> refs{seq_of(a), seq_of(c)};
  const std::vector<FeatureSequence> convs{seq_of(b), seq_of(c)};
  const EvalReport r = evaluate_pairs(refs, convs, "x2y");
  EXPECT_NEAR(r.mcd_per_utterance[0], kMcdScale / 2, 1e-12);
  EXPECT_EQ(r.mcd_per_utterance[1], 0.0);
  EXPECT_NEAR(r.mcd_mean, kMcdScale / 4, 1e-12);
  EXPECT_EQ(r.n_frames, 6);
  std::ostringstream os;
  write_eval_csv(os, std::vector<EvalReport>{r});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "method,direction,mcd_mean_db,mcd_stderr_db,n_utterances,n_frames,diversity");
}

TEST(ModeCoverage, TrueMixturePassesAndSingleModeFails) {
  const MixtureSpec spec{{-1.5, 1.5}, {0.25, 0.25}, {0.5, 0.5}};
  Rng rng(56);
  auto oracle = [&](int n) {
    std::vector<double> v(n);
    for (auto& x : v) x = spec.sample(rng);
    return v;
  };
  const ModeCoverage ok = mode_coverage_test(oracle, spec, 10000);
  EXPECT_TRUE(ok.pass);
  EXPECT_NEAR(ok.component_fractions[0], 0.5, 0.03);
  long binned = ok.outside;
  for (long c : ok.bin_counts) binned += c;
  EXPECT_EQ(binned, 10000);

  auto collapsed = [&](int n) {
    std::vector<double> v(n);
    for (auto& x : v) x = 1.5 + 0.25 * rng.normal();
    return v;
  };
  EXPECT_FALSE(mode_coverage_test(collapsed, spec, 10000).pass);
}

TEST(ModeCoverage, NearestMeanAssignmentOracle) {
  const MixtureSpec spec{{0.0, 4.0}, {1.0, 1.0}, {1.0, 1.0}};
  const std::vector<double> draws{-1, 1.9, 2.1, 5, 3, 0.5, 2.0, 10, -3, 1.0};
  int zero = 0;
  for (double x : draws) zero += std::abs(x) <= std::abs(x - 4) ? 1 : 0;
  const auto r = mode_coverage_test([&](int) { return draws; }, spec, 10);
  EXPECT_EQ(r.component_counts[0], zero);
  EXPECT_EQ(r.component_counts[1], 10 - zero);
  EXPECT_THROW(mode_coverage_test([&](int) { return draws; }, spec, 11), InvalidArgument);
}
