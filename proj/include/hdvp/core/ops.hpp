#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#include "hdvp/core/autograd.hpp"

namespace hdvp::ops {

namespace detail {

template <class T, class F, class G>
Var<T> unary(const Var<T>& a, F fwd, G dfdx) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(std::move(out), {a}, [dfdx](Node<T>& r) {
    if (auto* g = grad_of(r, 0)) {
      const auto& x = r.parents[0]->value;
      for (std::int64_t i = 0; i < x.numel(); ++i) (*g)[i] += r.grad[i] * dfdx(x[i], r.value[i]);
    }
  });
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& r) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = grad_of(r, p))
        for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i];
    if (auto* g = grad_of(r, 1))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] -= r.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& r) {
    const auto& av = r.parents[0]->value;
    const auto& bv = r.parents[1]->value;
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i] * bv[i];
    if (auto* g = grad_of(r, 1))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i] * av[i];
  });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_same_shape(a.shape(), b.shape(), "div");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& r) {
    const auto& bv = r.parents[1]->value;
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i] / bv[i];
    if (auto* g = grad_of(r, 1))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i)
        (*g)[i] -= r.grad[i] * r.value[i] / bv[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary<T>(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary<T>(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  return detail::unary<T>(
      a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

/// log(1 + e^x), stable for large |x|.
template <class T>
Var<T> softplus(const Var<T>& a) {
  return detail::unary<T>(
      a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

/// max(a, c) elementwise against a constant.
template <class T>
Var<T> clamp_min(const Var<T>& a, T c) {
  return detail::unary<T>(
      a, [c](T x) { return x > c ? x : c; }, [c](T x, T) { return x > c ? T(1) : T(0); });
}

template <class T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::constant(a.value());
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a.value()[i];
  return make_result<T>(Tensor<T>({1}, s), {a}, [](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += r.grad[0];
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Sum over the trailing dimension: [..., D] -> [...].
template <class T>
Var<T> sum_last(const Var<T>& a) {
  const int d = a.shape().back();
  Shape s(a.shape().begin(), a.shape().end() - 1);
  if (s.empty()) s = {1};
  Tensor<T> out(s);
  for (std::int64_t r = 0; r < out.numel(); ++r) {
    T acc = 0;
    for (int j = 0; j < d; ++j) acc += a.value()[r * d + j];
    out[r] = acc;
  }
  return make_result<T>(std::move(out), {a}, [d](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < r.value.numel(); ++i)
        for (int j = 0; j < d; ++j) (*g)[i * d + j] += r.grad[i];
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  return make_result<T>(a.value().reshaped(std::move(s)), {a}, [](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i];
  });
}

/// Concatenate along `axis`; all other dims must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  require(!xs.empty(), ErrorKind::kShape, "concat of empty list");
  Shape s = xs[0].shape();
  const auto ax = static_cast<std::size_t>(axis);
  int total = 0;
  for (const auto& x : xs) {
    require(x.shape().size() == s.size(), ErrorKind::kShape, "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      require(d == ax || x.shape()[d] == s[d], ErrorKind::kShape,
              "concat shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(s));
    total += x.shape()[ax];
  }
  s[ax] = total;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  Tensor<T> out(s);
  std::vector<int> widths;
  for (const auto& x : xs) widths.push_back(x.shape()[ax]);
  int off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].value();
    const std::int64_t chunk = widths[k] * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(xv.data() + o * chunk, chunk, out.data() + (o * total + off) * inner);
    off += widths[k];
  }
  return make_result<T>(std::move(out), xs, [widths, outer, inner, total](Node<T>& r) {
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const std::int64_t chunk = widths[k] * inner;
      if (auto* g = grad_of(r, k))
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < chunk; ++i)
            (*g)[o * chunk + i] += r.grad[(o * total + off) * inner + i];
      off += widths[k];
    }
  });
}

/// Narrow `axis` to [start, start+len).
template <class T>
Var<T> slice(const Var<T>& a, int axis, int start, int len) {
  Shape s = a.shape();
  const auto ax = static_cast<std::size_t>(axis);
  require(start >= 0 && len >= 0 && start + len <= s[ax], ErrorKind::kShape,
          "slice out of range on " + shape_str(s));
  const int full = s[ax];
  s[ax] = len;
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  Tensor<T> out(s);
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data() + (o * full + start) * inner, len * inner,
                out.data() + o * len * inner);
  return make_result<T>(std::move(out), {a}, [outer, inner, full, start, len](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < len * inner; ++i)
          (*g)[(o * full + start) * inner + i] += r.grad[o * len * inner + i];
  });
}

/// Gather rows of a [B, D] matrix: out[b] = a[index[b]].
template <class T>
Var<T> gather_rows(const Var<T>& a, const std::vector<int>& index) {
  const int d = a.dim(1);
  Tensor<T> out({static_cast<int>(index.size()), d});
  for (std::size_t b = 0; b < index.size(); ++b)
    std::copy_n(a.value().data() + static_cast<std::int64_t>(index[b]) * d, d,
                out.data() + static_cast<std::int64_t>(b) * d);
  return make_result<T>(std::move(out), {a}, [index, d](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::size_t b = 0; b < index.size(); ++b)
        for (int j = 0; j < d; ++j)
          (*g)[static_cast<std::int64_t>(index[b]) * d + j] +=
              r.grad[static_cast<std::int64_t>(b) * d + j];
  });
}

/// Multiply each leading-index block by a constant: a[b, ...] * coeff[b].
template <class T>
Var<T> scale_rows(const Var<T>& a, const std::vector<T>& coeff) {
  require(static_cast<int>(coeff.size()) == a.dim(0), ErrorKind::kShape, "scale_rows size");
  const std::int64_t inner = a.numel() / a.dim(0);
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a.value()[i] * coeff[i / inner];
  return make_result<T>(std::move(out), {a}, [coeff, inner](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (std::int64_t i = 0; i < r.grad.numel(); ++i) (*g)[i] += r.grad[i] * coeff[i / inner];
  });
}

/// y = x W^T + b with x [B, In], W [Out, In], b [Out].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  require(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(1),
          ErrorKind::kShape,
          "linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  const int bsz = x.dim(0), in = x.dim(1), outd = w.dim(0);
  Tensor<T> out({bsz, outd});
  MMap(out.data(), bsz, outd).noalias() =
      CMap(x.value().data(), bsz, in) * CMap(w.value().data(), outd, in).transpose();
  for (int i = 0; i < bsz; ++i)
    for (int j = 0; j < outd; ++j) out.at(i, j) += b.value()[j];
  return make_result<T>(std::move(out), {x, w, b}, [bsz, in, outd](Node<T>& r) {
    CMap gy(r.grad.data(), bsz, outd);
    if (auto* g = grad_of(r, 0))
      MMap(g->data(), bsz, in).noalias() += gy * CMap(r.parents[1]->value.data(), outd, in);
    if (auto* g = grad_of(r, 1))
      MMap(g->data(), outd, in).noalias() +=
          gy.transpose() * CMap(r.parents[0]->value.data(), bsz, in);
    if (auto* g = grad_of(r, 2))
      for (int i = 0; i < bsz; ++i)
        for (int j = 0; j < outd; ++j) (*g)[j] += gy(i, j);
  });
}

/// Mean softmax cross-entropy of logits [B, K] against integer labels.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const int bsz = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(labels.size()) == bsz, ErrorKind::kShape, "cross_entropy labels");
  Tensor<T> prob({bsz, k});
  T loss = 0;
  for (int i = 0; i < bsz; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < k; ++j) mx = std::max(mx, logits.value().at(i, j));
    T z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(logits.value().at(i, j) - mx);
    for (int j = 0; j < k; ++j) prob.at(i, j) = std::exp(logits.value().at(i, j) - mx) / z;
    loss -= logits.value().at(i, labels[i]) - mx - std::log(z);
  }
  loss /= static_cast<T>(bsz);
  return make_result<T>(Tensor<T>({1}, loss), {logits}, [prob, labels, bsz, k](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (int i = 0; i < bsz; ++i)
        for (int j = 0; j < k; ++j)
          g->at(i, j) += r.grad[0] * (prob.at(i, j) - (j == labels[i] ? T(1) : T(0))) /
                         static_cast<T>(bsz);
  });
}

/// Reparameterised Gaussian sample mu + exp(logvar/2) * eps with eps given.
template <class T>
Var<T> reparameterize(const Var<T>& mu, const Var<T>& logvar, const Tensor<T>& eps) {
  return add(mu, mul(exp(scale(logvar, T(0.5))), Var<T>::constant(eps)));
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over all elements, divided by `batch`.
template <class T>
Var<T> gaussian_kl(const Var<T>& mu, const Var<T>& logvar, int batch) {
  auto t = sub(add(square(mu), exp(logvar)), add_scalar(logvar, T(1)));
  return scale(sum(t), T(0.5) / static_cast<T>(batch));
}

}  // namespace hdvp::ops
