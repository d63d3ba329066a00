#pragma once

#include <cmath>
#include <map>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dgvc/autograd.hpp"
#include "dgvc/error.hpp"
#include "dgvc/rng.hpp"
#include "dgvc/tensor.hpp"

namespace dgvc {

enum class Precision { f32, f64 };

template <class T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

inline const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

/// Ordered, named collection of parameter arrays.
template <class T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, Tensor<T> value) {
    require<InvalidArgument>(!index_.contains(name), "duplicate parameter name " + name);
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.push_back(std::move(value));
    return tensors_.size() - 1;
  }

  std::size_t count() const noexcept { return tensors_.size(); }
  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }
  Precision precision() const noexcept { return precision_of<T>(); }

  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  Tensor<T>& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_.at(i); }
  Tensor<T>& at(const std::string& name) { return tensors_.at(lookup(name)); }
  const Tensor<T>& at(const std::string& name) const { return tensors_.at(lookup(name)); }
  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
    return it->second;
  }

  /// Zero-filled store with the same layout.
  ParamStore zeros_like() const {
    ParamStore z;
    for (std::size_t i = 0; i < count(); ++i) z.add(names_[i], Tensor<T>(tensors_[i].shape(), T(0)));
    return z;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < count(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters placed on a graph: one leaf per array, trainable or constant.
template <class T>
struct Bound {
  std::vector<Var> vars;
  const ParamStore<T>* store = nullptr;
  Var operator[](std::size_t i) const { return vars.at(i); }
  Var operator()(const std::string& name) const { return vars.at(store->lookup(name)); }
};

template <class T>
Bound<T> bind(Graph<T>& g, const ParamStore<T>& p, bool trainable) {
  Bound<T> b;
  b.store = &p;
  b.vars.reserve(p.count());
  for (std::size_t i = 0; i < p.count(); ++i) b.vars.push_back(trainable ? g.param(p[i]) : g.input(p[i]));
  return b;
}

/// Add the graph gradients of bound parameters into `acc` (same layout).
template <class T>
void accumulate_grads(const Graph<T>& g, const Bound<T>& b, ParamStore<T>& acc, T scale = T(1)) {
  for (std::size_t i = 0; i < b.vars.size(); ++i) {
    const Tensor<T> gi = g.grad(b.vars[i]);
    Tensor<T>& a = acc[i];
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * gi[k];
  }
}

/// Builds a parameter store while drawing initial values from one stream.
template <class T>
class ParamBuilder {
 public:
  explicit ParamBuilder(Rng& rng) : rng_(rng) {}

  /// Weight with N(0, gain^2 / fan_in) entries.
  void weight(const std::string& name, Shape shape, int fan_in, double gain = 1.0) {
    Tensor<T> w(shape);
    const double sd = gain / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : w.values()) v = static_cast<T>(sd * rng_.normal());
    store_.add(name, std::move(w));
  }
  void constant(const std::string& name, Shape shape, T value = T(0)) { store_.add(name, Tensor<T>(shape, value)); }

  void conv(const std::string& name, int cin, int cout, int kh, int kw, double gain = 1.0) {
    weight(name + ".w", {cout, cin, kh, kw}, cin * kh * kw, gain);
    constant(name + ".b", {cout});
  }
  void dense(const std::string& name, int in, int out, double gain = 1.0) {
    weight(name + ".w", {out, in}, in, gain);
    constant(name + ".b", {out});
  }

  ParamStore<T> take() { return std::move(store_); }

 private:
  Rng& rng_;
  ParamStore<T> store_;
};

}  // namespace dgvc
