#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "dgvc/error.hpp"
#include "dgvc/features.hpp"

namespace dgvc {

// Feature file layout, all little-endian:
//   "DGVC"  u32 version=1  u32 Q  u32 T  f64 frame_rate  u32 sample_rate
//   f32[Q*T] mcep (row-major)  f32[T] logf0  u8[T] voiced
//   u32 ap_len  u8[ap_len] ap
inline constexpr char kFeatureMagic[4] = {'D', 'G', 'V', 'C'};
inline constexpr std::uint32_t kFeatureVersion = 1;

class FeatureFileError : public FormatError {
 public:
  enum class Reason { bad_magic, bad_version, truncated, non_finite, bad_header, trailing_data };
  FeatureFileError(Reason r, const std::string& what) : FormatError(what), reason_(r) {}
  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

namespace bin {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes(raw, sizeof(U));
  }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}
  bool has(std::size_t n) const { return buf_.size() - pos_ >= n; }
  void bytes(void* out, std::size_t n) {
    if (!has(n))
      throw FeatureFileError(FeatureFileError::Reason::truncated,
                             "file truncated at byte " + std::to_string(pos_) + " (need " + std::to_string(n) + " more)");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <class U>
  U le() {
    std::uint8_t raw[sizeof(U)];
    bytes(raw, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace bin

inline std::vector<std::uint8_t> encode_features(const FeatureSequence& seq) {
  require<ShapeError>(seq.frames() > 0, "refusing to encode an empty feature sequence");
  seq.validate();
  bin::Writer w;
  w.bytes(kFeatureMagic, 4);
  w.le<std::uint32_t>(kFeatureVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(seq.dim()));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(seq.frames()));
  w.le<double>(seq.frame_rate);
  w.le<std::uint32_t>(seq.sample_rate);
  for (float v : seq.mcep.values()) w.le<float>(v);
  for (float v : seq.logf0) w.le<float>(v);
  w.bytes(seq.voiced.data(), seq.voiced.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(seq.ap.size()));
  w.bytes(seq.ap.data(), seq.ap.size());
  return w.buffer();
}

inline FeatureSequence decode_features(const std::vector<std::uint8_t>& buf) {
  using R = FeatureFileError::Reason;
  bin::Reader r(buf);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw FeatureFileError(R::bad_magic, "not a feature file (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kFeatureVersion)
    throw FeatureFileError(R::bad_version, "unsupported feature file version " + std::to_string(version));
  const auto q = r.le<std::uint32_t>();
  const auto n = r.le<std::uint32_t>();
  if (q == 0 || n == 0) throw FeatureFileError(R::bad_header, "feature file declares an empty matrix");
  if (q > (1u << 16) || n > (1u << 26)) throw FeatureFileError(R::bad_header, "feature file dimensions implausible");
  FeatureSequence s;
  s.frame_rate = r.le<double>();
  s.sample_rate = r.le<std::uint32_t>();
  if (!std::isfinite(s.frame_rate) || s.frame_rate <= 0.0)
    throw FeatureFileError(R::bad_header, "feature file frame rate must be positive and finite");
  if (s.sample_rate == 0 || s.frame_rate > s.sample_rate)
    throw FeatureFileError(R::bad_header, "feature file sample rate must be positive and at least the frame rate");
  if (!r.has(static_cast<std::size_t>(q) * n * 4 + static_cast<std::size_t>(n) * 5 + 4))
    throw FeatureFileError(R::truncated, "feature file truncated in payload");
  s.mcep = Tensor<float>({static_cast<int>(q), static_cast<int>(n)});
  for (auto& v : s.mcep.values()) v = r.le<float>();
  s.logf0.resize(n);
  for (auto& v : s.logf0) v = r.le<float>();
  s.voiced.resize(n);
  r.bytes(s.voiced.data(), n);
  const auto ap_len = r.le<std::uint32_t>();
  s.ap.resize(ap_len);
  r.bytes(s.ap.data(), ap_len);
  if (r.remaining() != 0) throw FeatureFileError(R::trailing_data, "trailing bytes after feature payload");
  if (!s.mcep.all_finite()) throw FeatureFileError(R::non_finite, "non-finite mcep value in feature file");
  for (float v : s.logf0)
    if (!std::isfinite(v)) throw FeatureFileError(R::non_finite, "non-finite logf0 value in feature file");
  for (auto v : s.voiced)
    if (v > 1) throw FeatureFileError(R::bad_header, "voiced mask must be 0/1");
  return s;
}

inline void write_features(const FeatureSequence& seq, const std::filesystem::path& path) {
  bin::write_file(path, encode_features(seq));
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
  try {
    return decode_features(bin::read_file(path));
  } catch (const FeatureFileError& e) {
    throw FeatureFileError(e.reason(), path.string() + ": " + e.what());
  }
}

}  // namespace dgvc
