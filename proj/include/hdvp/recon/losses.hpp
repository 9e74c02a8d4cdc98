#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "hdvp/core/nn.hpp"

namespace hdvp::recon {

/// Per-step (or per-epoch mean) loss values. Generator-side terms make up `total`.
struct LossReport {
  double recon = 0, kl = 0, adv_img_G = 0, adv_img_D = 0, l_back = 0, l_content = 0;
  double l_adv_pose_E = 0, l_adv_pose_D = 0, l_mask = 0, total = 0;
  double mask_mean = 0;
};

inline void to_json(nlohmann::json& j, const LossReport& r) {
  j = {{"recon", r.recon},       {"kl", r.kl},
       {"adv_img_G", r.adv_img_G}, {"adv_img_D", r.adv_img_D},
       {"l_back", r.l_back},     {"l_content", r.l_content},
       {"l_adv_pose_E", r.l_adv_pose_E}, {"l_adv_pose_D", r.l_adv_pose_D},
       {"l_mask", r.l_mask},     {"total", r.total},
       {"mask_mean", r.mask_mean}};
}

/// alpha ~ U[0, e/E].
inline double sample_alpha(int epoch, int total_epochs, Rng& rng) {
  require(total_epochs >= 1, ErrorKind::kInvalidArgument, "sample_alpha: total_epochs must be >= 1");
  require(epoch >= 0 && epoch <= total_epochs, ErrorKind::kInvalidArgument,
          "sample_alpha: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + "]");
  const double hi = static_cast<double>(epoch) / total_epochs;
  if (hi == 0) return 0;
  return std::uniform_real_distribution<double>(0.0, hi)(rng);
}

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::kShape, "code length mismatch");
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// For each code, the index of the nearest other code (ties to the smallest index).
inline std::vector<int> match_content(const std::vector<std::vector<double>>& codes,
                                      const std::vector<std::vector<double>>& others) {
  require(codes.size() == others.size(), ErrorKind::kShape, "match_content: list lengths differ");
  std::vector<int> out;
  for (const auto& c : codes) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < others.size(); ++j) {
      const double d = squared_distance(c, others[j]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    out.push_back(best);
  }
  return out;
}

/// Nearest and second-nearest indices; `second` is -1 when fewer than two candidates.
inline std::pair<int, int> two_nearest(const std::vector<double>& code, const std::vector<std::vector<double>>& others) {
  int first = -1, second = -1;
  double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
  for (std::size_t j = 0; j < others.size(); ++j) {
    const double d = squared_distance(code, others[j]);
    if (d < d1) {
      second = first;
      d2 = d1;
      first = static_cast<int>(j);
      d1 = d;
    } else if (d < d2) {
      second = static_cast<int>(j);
      d2 = d;
    }
  }
  return {first, second};
}

inline std::vector<double> mix_content(const std::vector<double>& z, const std::vector<double>& other, double alpha) {
  require(z.size() == other.size(), ErrorKind::kShape, "mix_content: length mismatch");
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = (1 - alpha) * z[k] + alpha * other[k];
  return out;
}

/// Row-wise convex combination (1 - alpha_b) a_b + alpha_b b_b.
template <class T>
Var<T> mix_rows(const Var<T>& a, const Var<T>& b, const std::vector<T>& alpha) {
  check_same_shape(a.shape(), b.shape(), "mix_content");
  std::vector<T> keep(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) keep[i] = T(1) - alpha[i];
  return ops::add(ops::scale_rows(a, keep), ops::scale_rows(b, alpha));
}

/// out[b] = candidates[index[b]][b] for a list of [B, k] codes.
template <class T>
Var<T> pick_rows(const std::vector<Var<T>>& candidates, const std::vector<int>& index) {
  const int bsz = candidates.at(0).dim(0);
  require(static_cast<int>(index.size()) == bsz, ErrorKind::kShape, "pick_rows: index size");
  std::vector<int> flat(index.size());
  for (int b = 0; b < bsz; ++b) flat[b] = index[b] * bsz + b;
  return ops::gather_rows(ops::concat<T>(candidates, 0), flat);
}

/// Row-wise squared distance [B, k] x [B, k] -> [B].
template <class T>
Var<T> row_sqdist(const Var<T>& a, const Var<T>& b) {
  return ops::sum_last(ops::square(ops::sub(a, b)));
}

/// mean_b max(0, d_pos - d_neg + margin).
template <class T>
Var<T> triplet_loss(const Var<T>& d_pos, const Var<T>& d_neg, T margin) {
  return ops::mean(ops::relu(ops::add_scalar(ops::sub(d_pos, d_neg), margin)));
}

/// (mean(mask) - 0.5)^2 averaged over the batch; mask [B,1,h,w].
template <class T>
Var<T> mask_loss(const Var<T>& mask) {
  return ops::mean(ops::square(ops::add_scalar(ops::mean_per_sample(mask), T(-0.5))));
}

/// Pose adversary from logits of D(z_p, z''_p) ("unrelated") and D(z_p, z'_p^j) ("same object").
///   L_advD = -E log D(unrelated) - E log(1 - D(same))
///   L_advE =  E log(1 - D(same))
template <class T>
Var<T> pose_dis_loss(const Var<T>& logit_unrelated, const Var<T>& logit_same) {
  return ops::add(ops::mean(ops::softplus(ops::neg(logit_unrelated))), ops::mean(ops::softplus(logit_same)));
}

template <class T>
Var<T> pose_gen_loss(const Var<T>& logit_same) {
  return ops::neg(ops::mean(ops::softplus(logit_same)));
}

/// Non-saturating generator loss -E log D(fake).
template <class T>
Var<T> image_gen_loss(const Var<T>& logit_fake) {
  return ops::mean(ops::softplus(ops::neg(logit_fake)));
}

/// -E log D(real) - E log(1 - D(fake)).
template <class T>
Var<T> image_dis_loss(const Var<T>& logit_real, const Var<T>& logit_fake) {
  return ops::add(ops::mean(ops::softplus(ops::neg(logit_real))), ops::mean(ops::softplus(logit_fake)));
}

/// Stochastic estimate of E||grad_x D(x)||^2 at real samples: for v ~ N(0, I),
/// E[(v . g)^2] = ||g||^2, with v . g taken as a central difference along v.
template <class T, class D>
Var<T> r1_penalty(const D& logits_fn, const Tensor<T>& real, Rng& rng, T step = T(1e-2)) {
  const auto v = randn<T>(real.shape(), rng);
  Tensor<T> plus = real, minus = real;
  for (std::int64_t i = 0; i < real.numel(); ++i) {
    plus[i] += step * v[i];
    minus[i] -= step * v[i];
  }
  auto dd = ops::scale(ops::sub(logits_fn(Var<T>::constant(plus)), logits_fn(Var<T>::constant(minus))), T(0.5) / step);
  return ops::mean(ops::square(dd));
}

}  // namespace hdvp::recon
