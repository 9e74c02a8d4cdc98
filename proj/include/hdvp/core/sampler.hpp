#pragma once

// Differentiable axis-aligned affine resampling (spatial transformer).
//
// Coordinates are normalised to [-1, 1] with pixel centres at (2i + 1) / n - 1.
// For an output pixel with normalised coordinate (u, v) the source location is
//   (ax * u + bx, ay * v + by),
// sampled bilinearly; anything outside the source reads as zero.
//
// A window code z_where = (cx, cy, sx, sy) describes the source rectangle
// centred at (cx, cy) with half-extent (sx, sy) in normalised units, so
// (0, 0, 1, 1) is the whole frame. Cropping uses theta = (sx, cx, sy, cy);
// pasting uses the inverse map theta = (1/sx, -cx/sx, 1/sy, -cy/sy).

#include <cmath>

#include "hdvp/core/autograd.hpp"

namespace hdvp::ops {

/// img [B, C, Hi, Wi], theta [B, 4] = (ax, bx, ay, by) -> [B, C, Ho, Wo].
template <class T>
Var<T> affine_sample(const Var<T>& img, const Var<T>& theta, int ho, int wo) {
  require(img.shape().size() == 4, ErrorKind::kShape,
          "affine_sample: image must be [B,C,H,W], got " + shape_str(img.shape()));
  require(theta.shape() == Shape{img.dim(0), 4}, ErrorKind::kShape,
          "affine_sample: theta must be [B,4], got " + shape_str(theta.shape()));
  const int bsz = img.dim(0), c = img.dim(1), hi = img.dim(2), wi = img.dim(3);
  Tensor<T> out({bsz, c, ho, wo});
  const auto& iv = img.value();
  const auto& th = theta.value();

  auto pix = [](T norm, int n) { return ((norm + T(1)) * static_cast<T>(n) - T(1)) / T(2); };
  auto out_norm = [](int i, int n) { return (T(2) * i + T(1)) / static_cast<T>(n) - T(1); };
  auto read = [&](int n, int ch, int y, int x) -> T {
    return (y >= 0 && y < hi && x >= 0 && x < wi) ? iv.at(n, ch, y, x) : T(0);
  };

  for (int n = 0; n < bsz; ++n) {
    const T ax = th.at(n, 0), bx = th.at(n, 1), ay = th.at(n, 2), by = th.at(n, 3);
    for (int oy = 0; oy < ho; ++oy) {
      const T py = pix(ay * out_norm(oy, ho) + by, hi);
      const int y0 = static_cast<int>(std::floor(py));
      const T fy = py - static_cast<T>(y0);
      for (int ox = 0; ox < wo; ++ox) {
        const T px = pix(ax * out_norm(ox, wo) + bx, wi);
        const int x0 = static_cast<int>(std::floor(px));
        const T fx = px - static_cast<T>(x0);
        for (int ch = 0; ch < c; ++ch) {
          out.at(n, ch, oy, ox) = (T(1) - fy) * ((T(1) - fx) * read(n, ch, y0, x0) + fx * read(n, ch, y0, x0 + 1)) +
                                  fy * ((T(1) - fx) * read(n, ch, y0 + 1, x0) + fx * read(n, ch, y0 + 1, x0 + 1));
        }
      }
    }
  }

  return make_result<T>(std::move(out), {img, theta}, [=](Node<T>& r) {
    const auto& iv = r.parents[0]->value;
    const auto& th = r.parents[1]->value;
    auto* gi = grad_of(r, 0);
    auto* gt = grad_of(r, 1);
    auto rd = [&](int n, int ch, int y, int x) -> T {
      return (y >= 0 && y < hi && x >= 0 && x < wi) ? iv.at(n, ch, y, x) : T(0);
    };
    auto acc = [&](int n, int ch, int y, int x, T v) {
      if (y >= 0 && y < hi && x >= 0 && x < wi) gi->at(n, ch, y, x) += v;
    };
    for (int n = 0; n < bsz; ++n) {
      const T ax = th.at(n, 0), bx = th.at(n, 1), ay = th.at(n, 2), by = th.at(n, 3);
      T g_ax = 0, g_bx = 0, g_ay = 0, g_by = 0;
      for (int oy = 0; oy < ho; ++oy) {
        const T vy = out_norm(oy, ho);
        const T py = pix(ay * vy + by, hi);
        const int y0 = static_cast<int>(std::floor(py));
        const T fy = py - static_cast<T>(y0);
        for (int ox = 0; ox < wo; ++ox) {
          const T ux = out_norm(ox, wo);
          const T px = pix(ax * ux + bx, wi);
          const int x0 = static_cast<int>(std::floor(px));
          const T fx = px - static_cast<T>(x0);
          T dpx = 0, dpy = 0;
          for (int ch = 0; ch < c; ++ch) {
            const T go = r.grad.at(n, ch, oy, ox);
            if (go == T(0)) continue;
            const T v00 = rd(n, ch, y0, x0), v01 = rd(n, ch, y0, x0 + 1);
            const T v10 = rd(n, ch, y0 + 1, x0), v11 = rd(n, ch, y0 + 1, x0 + 1);
            if (gi) {
              acc(n, ch, y0, x0, go * (T(1) - fy) * (T(1) - fx));
              acc(n, ch, y0, x0 + 1, go * (T(1) - fy) * fx);
              acc(n, ch, y0 + 1, x0, go * fy * (T(1) - fx));
              acc(n, ch, y0 + 1, x0 + 1, go * fy * fx);
            }
            dpx += go * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
            dpy += go * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
          }
          // d px / d(ax, bx) = (wi / 2) * (u, 1)
          const T sx = static_cast<T>(wi) / T(2), sy = static_cast<T>(hi) / T(2);
          g_ax += dpx * sx * ux;
          g_bx += dpx * sx;
          g_ay += dpy * sy * vy;
          g_by += dpy * sy;
        }
      }
      if (gt) {
        gt->at(n, 0) += g_ax;
        gt->at(n, 1) += g_bx;
        gt->at(n, 2) += g_ay;
        gt->at(n, 3) += g_by;
      }
    }
  });
}

/// Map a window code [B, 4] = (cx, cy, sx, sy) to sampler parameters.
/// `inverse` selects the paste (window -> canvas) direction.
template <class T>
Var<T> window_theta(const Var<T>& zwhere, bool inverse) {
  require(zwhere.shape().size() == 2 && zwhere.dim(1) == 4, ErrorKind::kShape,
          "window code must be [B,4], got " + shape_str(zwhere.shape()));
  const int bsz = zwhere.dim(0);
  Tensor<T> out({bsz, 4});
  for (int n = 0; n < bsz; ++n) {
    const T cx = zwhere.value().at(n, 0), cy = zwhere.value().at(n, 1);
    const T sx = zwhere.value().at(n, 2), sy = zwhere.value().at(n, 3);
    if (inverse) {
      out.at(n, 0) = T(1) / sx;
      out.at(n, 1) = -cx / sx;
      out.at(n, 2) = T(1) / sy;
      out.at(n, 3) = -cy / sy;
    } else {
      out.at(n, 0) = sx;
      out.at(n, 1) = cx;
      out.at(n, 2) = sy;
      out.at(n, 3) = cy;
    }
  }
  return make_result<T>(std::move(out), {zwhere}, [bsz, inverse](Node<T>& r) {
    auto* g = grad_of(r, 0);
    if (!g) return;
    const auto& z = r.parents[0]->value;
    for (int n = 0; n < bsz; ++n) {
      const T cx = z.at(n, 0), cy = z.at(n, 1), sx = z.at(n, 2), sy = z.at(n, 3);
      if (inverse) {
        g->at(n, 2) += -r.grad.at(n, 0) / (sx * sx) + r.grad.at(n, 1) * cx / (sx * sx);
        g->at(n, 0) += -r.grad.at(n, 1) / sx;
        g->at(n, 3) += -r.grad.at(n, 2) / (sy * sy) + r.grad.at(n, 3) * cy / (sy * sy);
        g->at(n, 1) += -r.grad.at(n, 3) / sy;
      } else {
        g->at(n, 2) += r.grad.at(n, 0);
        g->at(n, 0) += r.grad.at(n, 1);
        g->at(n, 3) += r.grad.at(n, 2);
        g->at(n, 1) += r.grad.at(n, 3);
      }
    }
  });
}

/// Crop the z_where window of `frame` and resample it to h x w.
template <class T>
Var<T> crop_window(const Var<T>& frame, const Var<T>& zwhere, int h, int w) {
  return affine_sample(frame, window_theta(zwhere, false), h, w);
}

/// Paste an h x w sub-image into an H x W canvas at its z_where window; zero elsewhere.
template <class T>
Var<T> paste_window(const Var<T>& sub, const Var<T>& zwhere, int height, int width) {
  return affine_sample(sub, window_theta(zwhere, true), height, width);
}

}  // namespace hdvp::ops
