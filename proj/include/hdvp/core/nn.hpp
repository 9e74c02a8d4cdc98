#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hdvp/core/conv.hpp"
#include "hdvp/core/ops.hpp"

namespace hdvp {

using Rng = std::mt19937_64;

template <class T>
Tensor<T> randn(const Shape& shape, Rng& rng, T stddev = T(1)) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng)) * stddev;
  return t;
}

template <class T>
Tensor<T> rand_uniform(const Shape& shape, Rng& rng, T lo, T hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

/// Ordered name -> parameter registry. Order is registration order, which
/// fixes the checkpoint layout.
template <class T>
class ParamSet {
 public:
  void add(const std::string& name, Var<T> p) {
    require(!index_.count(name), ErrorKind::kInvalidArgument, "duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(p));
  }
  void merge(const std::string& prefix, const ParamSet& other) {
    for (const auto& [n, p] : other.entries_) add(prefix + n, p);
  }
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  Var<T>& get(const std::string& name) { return entries_.at(index_.at(name)).second; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace nn {

template <class T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in));
    weight = Var<T>::parameter(rand_uniform<T>({out, in}, rng, -bound, bound));
    bias = Var<T>::parameter(Tensor<T>({out}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }
};

template <class T>
struct Conv2d {
  Var<T> weight, bias;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride_, int pad_, Rng& rng) : stride(stride_), pad(pad_) {
    const T bound = std::sqrt(T(6) / static_cast<T>(in * k * k));
    weight = Var<T>::parameter(rand_uniform<T>({out, in, k, k}, rng, -bound, bound));
    bias = Var<T>::parameter(Tensor<T>({out}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
  }
};

template <class T>
struct LstmState {
  Var<T> h, c;
};

/// Single LSTM cell, gate order (input, forget, cell, output).
template <class T>
struct LstmCell {
  Linear<T> gates;
  int hidden = 0;

  LstmCell() = default;
  LstmCell(int in, int hidden_, Rng& rng) : gates(in + hidden_, 4 * hidden_, rng), hidden(hidden_) {
    // forget-gate bias 1
    auto& b = gates.bias.mutable_value();
    for (int j = hidden; j < 2 * hidden; ++j) b[j] = T(1);
  }
  LstmState<T> zero_state(int bsz) const {
    return {Var<T>::constant(Tensor<T>({bsz, hidden})), Var<T>::constant(Tensor<T>({bsz, hidden}))};
  }
  LstmState<T> operator()(const Var<T>& x, const LstmState<T>& s) const {
    auto g = gates(ops::concat<T>({x, s.h}, 1));
    auto i = ops::sigmoid(ops::slice(g, 1, 0, hidden));
    auto f = ops::sigmoid(ops::slice(g, 1, hidden, hidden));
    auto u = ops::tanh(ops::slice(g, 1, 2 * hidden, hidden));
    auto o = ops::sigmoid(ops::slice(g, 1, 3 * hidden, hidden));
    auto c = ops::add(ops::mul(f, s.c), ops::mul(i, u));
    auto h = ops::mul(o, ops::tanh(c));
    return {h, c};
  }
  void collect(ParamSet<T>& ps, const std::string& prefix) const { gates.collect(ps, prefix + ".gates"); }
};

/// Three fully connected layers with leaky-ReLU between them.
template <class T>
struct Mlp3 {
  Linear<T> l1, l2, l3;

  Mlp3() = default;
  Mlp3(int in, int h1, int h2, int out, Rng& rng) : l1(in, h1, rng), l2(h1, h2, rng), l3(h2, out, rng) {}
  Var<T> operator()(const Var<T>& x) const {
    return l3(ops::leaky_relu(l2(ops::leaky_relu(l1(x)))));
  }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    l1.collect(ps, prefix + ".l1");
    l2.collect(ps, prefix + ".l2");
    l3.collect(ps, prefix + ".l3");
  }
};

}  // namespace nn

/// Adaptive moment estimation over a ParamSet.
template <class T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : params_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& [_, p] : params_.entries()) {
      m_.emplace_back(p.numel(), T(0));
      v_.emplace_back(p.numel(), T(0));
    }
  }

  void zero_grad() { params_.zero_grad(); }

  /// Returns the pre-clip global gradient norm.
  T step(T clip_norm = T(0)) {
    ++t_;
    double sq = 0;
    for (const auto& [_, p] : params_.entries())
      for (std::int64_t i = 0; i < p.grad().numel(); ++i) sq += double(p.grad()[i]) * p.grad()[i];
    const T norm = static_cast<T>(std::sqrt(sq));
    const T factor = (clip_norm > T(0) && norm > clip_norm) ? clip_norm / norm : T(1);
    const T c1 = T(1) - std::pow(b1_, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(b2_, static_cast<T>(t_));
    std::size_t k = 0;
    for (const auto& entry : params_.entries()) {
      Var<T> p = entry.second;
      auto& m = m_[k];
      auto& v = v_[k];
      ++k;
      if (p.grad().numel() == 0) continue;
      auto& w = p.mutable_value();
      for (std::int64_t i = 0; i < w.numel(); ++i) {
        const T g = p.grad()[i] * factor;
        m[i] = b1_ * m[i] + (T(1) - b1_) * g;
        v[i] = b2_ * v[i] + (T(1) - b2_) * g * g;
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
    return norm;
  }

  void set_lr(T lr) { lr_ = lr; }

 private:
  ParamSet<T> params_;
  std::vector<std::vector<T>> m_, v_;
  T lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace hdvp
