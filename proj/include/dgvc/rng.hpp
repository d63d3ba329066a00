#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "dgvc/error.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

/// Seedable random stream with a serializable state.
///
/// Distributions are implemented here rather than through <random> adaptors so
/// the sequence is fixed by this code alone and no hidden cache survives a
/// save/restore of the engine state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream derived from a base seed and a purpose name.
  static Rng stream(std::uint64_t seed, std::string_view purpose) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : purpose) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    require<InvalidArgument>(lo <= hi, "uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<int>(v % span);
  }

  /// Standard normal via Box-Muller (one output per call, no cached pair).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  Tensor<T> normal_tensor(const Shape& shape) {
    Tensor<T> t(shape);
    for (auto& v : t.values()) v = static_cast<T>(normal());
    return t;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    require<FormatError>(!is.fail(), "corrupt rng state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dgvc
