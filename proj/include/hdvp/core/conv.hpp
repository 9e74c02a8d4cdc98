#pragma once

#include <Eigen/Core>

#include "hdvp/core/autograd.hpp"
#include "hdvp/core/ops.hpp"

namespace hdvp::ops {

namespace detail {

template <class T>
void im2col(const T* img, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* col) {
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? img[(static_cast<std::int64_t>(ci) * h + iy) * w + ix]
                                    : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* img) {
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::int64_t>(ci) * k + ky) * k + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) img[(static_cast<std::int64_t>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution. x [B, C, H, W], w [O, C, k, k], b [O].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  require(x.shape().size() == 4 && w.shape().size() == 4 && x.dim(1) == w.dim(1),
          ErrorKind::kShape,
          "conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  const int bsz = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  require(ho > 0 && wo > 0, ErrorKind::kShape, "conv2d: empty output");
  const int ck = c * k * k, hw = ho * wo;
  Tensor<T> out({bsz, o, ho, wo});
  Mat col(ck, hw);
  CMap wm(w.value().data(), o, ck);
  for (int n = 0; n < bsz; ++n) {
    detail::im2col(x.value().data() + static_cast<std::int64_t>(n) * c * h * wd, c, h, wd, k,
                   stride, pad, ho, wo, col.data());
    MMap om(out.data() + static_cast<std::int64_t>(n) * o * hw, o, hw);
    om.noalias() = wm * col;
    for (int oc = 0; oc < o; ++oc) om.row(oc).array() += b.value()[oc];
  }
  return make_result<T>(std::move(out), {x, w, b}, [=](Node<T>& r) {
    const auto& xv = r.parents[0]->value;
    CMap wm(r.parents[1]->value.data(), o, ck);
    auto* gx = grad_of(r, 0);
    auto* gw = grad_of(r, 1);
    auto* gb = grad_of(r, 2);
    Mat col(ck, hw), gcol(ck, hw);
    for (int n = 0; n < bsz; ++n) {
      CMap gy(r.grad.data() + static_cast<std::int64_t>(n) * o * hw, o, hw);
      if (gw) {
        detail::im2col(xv.data() + static_cast<std::int64_t>(n) * c * h * wd, c, h, wd, k,
                       stride, pad, ho, wo, col.data());
        MMap(gw->data(), o, ck).noalias() += gy * col.transpose();
      }
      if (gb)
        for (int oc = 0; oc < o; ++oc) (*gb)[oc] += gy.row(oc).sum();
      if (gx) {
        gcol.noalias() = wm.transpose() * gy;
        detail::col2im_add(gcol.data(), c, h, wd, k, stride, pad, ho, wo,
                           gx->data() + static_cast<std::int64_t>(n) * c * h * wd);
      }
    }
  });
}

/// Nearest-neighbour 2x upsampling of [B, C, H, W].
template <class T>
Var<T> upsample2x(const Var<T>& x) {
  const int bsz = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({bsz, c, 2 * h, 2 * w});
  for (int n = 0; n < bsz; ++n)
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) out.at(n, ci, y, xx) = x.value().at(n, ci, y / 2, xx / 2);
  return make_result<T>(std::move(out), {x}, [=](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (int n = 0; n < bsz; ++n)
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) g->at(n, ci, y / 2, xx / 2) += r.grad.at(n, ci, y, xx);
  });
}

/// Tile a [B, D] code over an h x w grid: [B, D, h, w].
template <class T>
Var<T> broadcast_spatial(const Var<T>& z, int h, int w) {
  const int bsz = z.dim(0), d = z.dim(1);
  Tensor<T> out({bsz, d, h, w});
  for (int n = 0; n < bsz; ++n)
    for (int j = 0; j < d; ++j) {
      T* p = out.data() + (static_cast<std::int64_t>(n) * d + j) * h * w;
      std::fill(p, p + h * w, z.value().at(n, j));
    }
  return make_result<T>(std::move(out), {z}, [=](Node<T>& r) {
    if (auto* g = grad_of(r, 0))
      for (int n = 0; n < bsz; ++n)
        for (int j = 0; j < d; ++j) {
          const T* p = r.grad.data() + (static_cast<std::int64_t>(n) * d + j) * h * w;
          T acc = 0;
          for (int i = 0; i < h * w; ++i) acc += p[i];
          g->at(n, j) += acc;
        }
  });
}

/// Constant [B, 2, h, w] channels holding normalised x and y pixel-centre coordinates in (-1, 1).
template <class T>
Tensor<T> coordinate_channels(int bsz, int h, int w) {
  Tensor<T> out({bsz, 2, h, w});
  for (int n = 0; n < bsz; ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.at(n, 0, y, x) = (T(2) * x + T(1)) / static_cast<T>(w) - T(1);
        out.at(n, 1, y, x) = (T(2) * y + T(1)) / static_cast<T>(h) - T(1);
      }
  return out;
}

/// Mean over channel-spatial positions per batch element: [B, C, H, W] -> [B, 1].
template <class T>
Var<T> mean_per_sample(const Var<T>& x) {
  const int bsz = x.dim(0);
  const std::int64_t inner = x.numel() / bsz;
  return reshape(scale(sum_last(reshape(x, {bsz, static_cast<int>(inner)})),
                       T(1) / static_cast<T>(inner)),
                 {bsz, 1});
}

}  // namespace hdvp::ops
