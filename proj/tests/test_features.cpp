#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgvc/corpus.hpp"
#include "dgvc/evalkit.hpp"
#include "dgvc/feature_io.hpp"
#include "dgvc/features.hpp"
#include "test_support.hpp"

using namespace dgvc;

namespace {

FeatureSequence random_sequence(Rng& rng, int q, int n) {
  FeatureSequence s;
  s.mcep = rng.normal_tensor<float>({q, n});
  for (int t = 0; t < n; ++t) {
    const bool v = rng.uniform() < 0.7;
    s.voiced.push_back(v);
    s.logf0.push_back(v ? static_cast<float>(std::log(150.0) + 0.2 * rng.normal()) : kUnvoicedLogF0);
  }
  for (int i = 0; i < 3 * n; ++i) s.ap.push_back(static_cast<std::uint8_t>(rng.next_u64()));
  return s;
}

SpeakerStats stats_of(double mu, double sd, int q = 2) {
  SpeakerStats s;
  s.logf0_mean = mu;
  s.logf0_std = sd;
  s.mcep_mean.assign(q, 0.0);
  s.mcep_std.assign(q, 1.0);
  return s;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Features, ConstantLogF0HasNoSpread) {
  Rng rng(41);
  FeatureSequence s = random_sequence(rng, 3, 10);
  for (std::size_t t = 0; t < s.logf0.size(); ++t) {
    s.voiced[t] = 1;
    s.logf0[t] = 5.0f;
  }
  const std::vector<FeatureSequence> one{s};
  EXPECT_NE(error_of([&] { compute_speaker_stats(one); }).find("log-F0 standard deviation is zero"), std::string::npos);
}

TEST(Features, AllUnvoicedCorpusRejected) {
  Rng rng(42);
  FeatureSequence s = random_sequence(rng, 3, 10);
  for (std::size_t t = 0; t < s.logf0.size(); ++t) {
    s.voiced[t] = 0;
    s.logf0[t] = kUnvoicedLogF0;
  }
  const std::vector<FeatureSequence> one{s};
  EXPECT_THROW(compute_speaker_stats(one), InvalidArgument);
}

TEST(Features, TwoValueStatsUsePopulationConvention) {
  FeatureSequence s;
  s.mcep = Tensor<float>({1, 2}, {1.0f, 4.0f});
  s.logf0 = {2.0f, 5.0f};
  s.voiced = {1, 1};
  const std::vector<FeatureSequence> one{s};
  const SpeakerStats st = compute_speaker_stats(one);
  EXPECT_DOUBLE_EQ(st.logf0_mean, 3.5);
  EXPECT_DOUBLE_EQ(st.logf0_std, 1.5);
  EXPECT_DOUBLE_EQ(st.mcep_mean[0], 2.5);
  EXPECT_DOUBLE_EQ(st.mcep_std[0], 1.5);
}

TEST(Features, StatsMatchTwoPassBruteForce) {
  Rng rng(43);
  std::vector<FeatureSequence> corpus;
  for (int i = 0; i < 5; ++i) corpus.push_back(random_sequence(rng, 4, 20 + 7 * i));
  const SpeakerStats st = compute_speaker_stats(corpus);
  std::vector<double> f0;
  std::vector<std::vector<double>> mc(4);
  for (const auto& s : corpus)
    for (int t = 0; t < s.frames(); ++t) {
      if (s.voiced[t]) f0.push_back(s.logf0[t]);
      for (int d = 0; d < 4; ++d) mc[d].push_back(s.mcep(d, t));
    }
  auto two_pass = [](const std::vector<double>& v) {
    double m = 0, ss = 0;
    for (double x : v) m += x;
    m /= v.size();
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / v.size())};
  };
  EXPECT_NEAR(st.logf0_mean, two_pass(f0).first, 1e-12);
  EXPECT_NEAR(st.logf0_std, two_pass(f0).second, 1e-12);
  for (int d = 0; d < 4; ++d) {
    EXPECT_NEAR(st.mcep_mean[d], two_pass(mc[d]).first, 1e-12);
    EXPECT_NEAR(st.mcep_std[d], two_pass(mc[d]).second, 1e-12);
  }
}

TEST(Features, LogF0ConversionExamples) {
  const SpeakerStats src = stats_of(std::log(120.0), 0.2), tgt = stats_of(std::log(220.0), 0.3);
  const std::vector<double> in{std::log(132.0), std::log(120.0), -1e10};
  const std::vector<std::uint8_t> voiced{1, 1, 0};
  const auto out = convert_logf0<double>(in, voiced, src, tgt);
  EXPECT_NEAR(out[0], std::log(220.0) + 0.3 * (std::log(132.0) - std::log(120.0)) / 0.2, 1e-12);
  EXPECT_NEAR(out[1], std::log(220.0), 1e-12);
  EXPECT_EQ(out[2], -1e10);
  EXPECT_EQ(convert_logf0<double>(in, voiced, src, src), in);
  EXPECT_THROW(convert_logf0<double>(in, voiced, stats_of(0.0, 0.0), tgt), InvalidArgument);
  EXPECT_THROW(convert_logf0<double>(in, std::vector<std::uint8_t>{1}, src, tgt), ShapeError);
}

TEST(Features, LogF0ConversionMapsCorpusStatistics) {
  Rng rng(44);
  std::vector<FeatureSequence> corpus;
  for (int i = 0; i < 6; ++i) corpus.push_back(random_sequence(rng, 2, 50));
  const SpeakerStats src = compute_speaker_stats(corpus);
  const SpeakerStats tgt = stats_of(std::log(230.0), 0.27);
  double s = 0, s2 = 0;
  long n = 0;
  for (const auto& seq : corpus) {
    const std::vector<double> f0(seq.logf0.begin(), seq.logf0.end());
    const auto out = convert_logf0<double>(f0, seq.voiced, src, tgt);
    for (std::size_t t = 0; t < out.size(); ++t)
      if (seq.voiced[t]) {
        s += out[t];
        ++n;
      }
  }
  const double mean = s / n;
  for (const auto& seq : corpus) {
    const std::vector<double> f0(seq.logf0.begin(), seq.logf0.end());
    const auto out = convert_logf0<double>(f0, seq.voiced, src, tgt);
    for (std::size_t t = 0; t < out.size(); ++t)
      if (seq.voiced[t]) s2 += (out[t] - mean) * (out[t] - mean);
  }
  EXPECT_NEAR(mean, tgt.logf0_mean, 1e-9);
  EXPECT_NEAR(std::sqrt(s2 / n), tgt.logf0_std, 1e-9);
}

TEST(Features, NormalizationRoundTripAndOracle) {
  Rng rng(45);
  const Tensor<float> x = rng.normal_tensor<float>({3, 8});
  SpeakerStats id = stats_of(0, 1, 3);
  EXPECT_EQ(normalize_mcep(x, id), x);
  SpeakerStats st = stats_of(0, 1, 3);
  st.mcep_mean = {1.0, -2.0, 0.5};
  st.mcep_std = {0.5, 2.0, 3.0};
  const Tensor<float> n = normalize_mcep(x, st);
  for (int d = 0; d < 3; ++d)
    for (int t = 0; t < 8; ++t) EXPECT_NEAR(n(d, t), (x(d, t) - st.mcep_mean[d]) / st.mcep_std[d], 1e-6);
  const Tensor<float> back = denormalize_mcep(n, st);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
  EXPECT_THROW(normalize_mcep(Tensor<float>({2, 8}), st), ShapeError);
}

TEST(Features, FileRoundTripIsBitExact) {
  Rng rng(46);
  const auto dir = dgvc::testing::scratch_dir("features_io");
  const FeatureSequence s = random_sequence(rng, 35, 37);
  write_features(s, dir / "a.dgvc");
  EXPECT_EQ(read_features(dir / "a.dgvc"), s);
  const auto bytes = encode_features(s);
  EXPECT_EQ(bytes.size(), 28u + 35 * 37 * 4 + 37 * 4 + 37 + 4 + 3 * 37);
  EXPECT_EQ(encode_features(decode_features(bytes)), bytes);
}

TEST(Features, EmptySequenceRejected) {
  FeatureSequence s;
  s.mcep = Tensor<float>({35, 0});
  EXPECT_THROW(encode_features(s), ShapeError);
  EXPECT_THROW(read_features("/nonexistent/x.dgvc"), IoError);
}

TEST(Features, CorruptFilesRejectedWithDistinctReasons) {
  Rng rng(47);
  const auto good = encode_features(random_sequence(rng, 4, 6));
  using R = FeatureFileError::Reason;
  auto reason = [](std::vector<std::uint8_t> b) {
    try {
      decode_features(b);
    } catch (const FeatureFileError& e) {
      return static_cast<int>(e.reason());
    }
    return -1;
  };
  auto b = good;
  b[0] = 'X';
  EXPECT_EQ(reason(b), int(R::bad_magic));
  b = good;
  b[4] = 2;
  EXPECT_EQ(reason(b), int(R::bad_version));
  b = good;
  b.resize(b.size() - 1);
  EXPECT_EQ(reason(b), int(R::truncated));
  b = good;
  b.push_back(0);
  EXPECT_EQ(reason(b), int(R::trailing_data));
  b = good;
  const float nan = NAN;
  std::memcpy(b.data() + 28, &nan, 4);
  EXPECT_EQ(reason(b), int(R::non_finite));
  b = good;
  std::memset(b.data() + 16, 0, 8);  // frame rate 0
  EXPECT_EQ(reason(b), int(R::bad_header));
}

TEST(Features, EveryBitFlipOfTheStructuralHeaderIsRejected) {
  Rng rng(48);
  const auto good = encode_features(random_sequence(rng, 5, 9));
  // magic, version, Q, T
  for (std::size_t byte = 0; byte < 16; ++byte)
    for (int bit = 0; bit < 8; ++bit) {
      auto b = good;
      b[byte] ^= static_cast<std::uint8_t>(1u << bit);
      EXPECT_THROW(decode_features(b), FeatureFileError) << "byte " << byte << " bit " << bit;
    }
  // Sample-rate mutations that make the header inconsistent.
  auto b = good;
  std::memset(b.data() + 24, 0, 4);
  EXPECT_THROW(decode_features(b), FeatureFileError);
}

TEST(Features, IndependentReaderAgrees) {
#ifndef DGVC_PYTHON
  GTEST_SKIP() << "no python interpreter found at configure time";
#else
  Rng rng(49);
  const auto dir = dgvc::testing::scratch_dir("features_py");
  const FeatureSequence s = random_sequence(rng, 6, 11);
  write_features(s, dir / "x.dgvc");
  const std::string cmd = std::string(DGVC_PYTHON) + " " + DGVC_PY_READER + " " + (dir / "x.dgvc").string();
  FILE* pipe = popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  ASSERT_EQ(pclose(pipe), 0);
  const auto j = nlohmann::json::parse(out);
  EXPECT_EQ(j["q"], 6);
  EXPECT_EQ(j["frames"], 11);
  EXPECT_EQ(j["frame_rate"].get<double>(), s.frame_rate);
  EXPECT_EQ(j["sample_rate"], s.sample_rate);
  const auto mcep = j["mcep"].get<std::vector<double>>();
  for (std::size_t i = 0; i < s.mcep.size(); ++i) EXPECT_EQ(static_cast<float>(mcep[i]), s.mcep[i]);
  const auto f0 = j["logf0"].get<std::vector<double>>();
  for (std::size_t i = 0; i < s.logf0.size(); ++i) EXPECT_EQ(static_cast<float>(f0[i]), s.logf0[i]);
  EXPECT_EQ(j["voiced"].get<std::vector<int>>(), std::vector<int>(s.voiced.begin(), s.voiced.end()));
  std::string hex;
  for (auto c : s.ap) {
    char h[3];
    std::snprintf(h, sizeof h, "%02x", c);
    hex += h;
  }
  EXPECT_EQ(j["ap"], hex);
#endif
}

TEST(Corpus, IdenticalSpeakersRejected) {
  CorpusConfig cfg;
  cfg.speaker_y = cfg.speaker_x;
  Rng rng(1);
  EXPECT_THROW(make_synthetic_corpus(cfg, rng), InvalidArgument);
}

TEST(Corpus, GenerationAndOracleAreDeterministic) {
  CorpusConfig cfg;
  cfg.n_train = 2;
  cfg.n_heldout = 2;
  Rng a(5), b(5);
  const auto ca = make_synthetic_corpus(cfg, a), cb = make_synthetic_corpus(cfg, b);
  EXPECT_EQ(ca.train_x, cb.train_x);
  EXPECT_EQ(ca.heldout_y, cb.heldout_y);
  const auto o1 = ca.oracle.apply(ca.heldout_x[0], Direction::x2y);
  const auto o2 = cb.oracle.apply(ca.heldout_x[0], Direction::x2y);
  EXPECT_EQ(o1, o2);
  // The oracle recovers the parallel rendition up to float rounding.
  for (std::size_t i = 0; i < o1.mcep.size(); ++i) EXPECT_NEAR(o1.mcep[i], ca.heldout_y[0].mcep[i], 1e-4);
  for (std::size_t t = 0; t < o1.logf0.size(); ++t)
    if (o1.voiced[t]) {
      EXPECT_NEAR(o1.logf0[t], ca.heldout_y[0].logf0[t], 1e-4);
    }
  EXPECT_EQ(o1.ap, ca.heldout_x[0].ap);
}

TEST(Corpus, DefaultSpeakersAreFarApart) {
  const CorpusConfig cfg;
  Rng rng = Rng::stream(1234, "corpus");
  const auto c = make_synthetic_corpus(cfg, rng);
  ASSERT_EQ(c.train_x.size(), 32u);
  ASSERT_EQ(c.heldout_x.size(), 8u);
  for (Direction dir : {Direction::x2y, Direction::y2x}) {
    const auto& src = dir == Direction::x2y ? c.heldout_x : c.heldout_y;
    double m = 0;
    for (const auto& s : src) m += mcd(c.oracle.apply(s, dir), s) / src.size();
    EXPECT_GT(m, 4.0) << direction_name(dir);
  }
  for (const auto& s : c.train_x) {
    EXPECT_GE(s.frames(), cfg.min_frames);
    EXPECT_LE(s.frames(), cfg.max_frames);
    EXPECT_NO_THROW(s.validate());
  }
}
