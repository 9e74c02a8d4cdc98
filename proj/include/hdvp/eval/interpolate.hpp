#pragma once

// Linear interpolation of one latent component between two encoded frames,
// with all other components held at the first frame's values.

#include <string>
#include <vector>

#include "hdvp/latent/codec.hpp"

namespace hdvp::eval {

enum class Component { kBack, kWhere, kPose, kContent };

inline Component parse_component(const std::string& s) {
  if (s == "z_back") return Component::kBack;
  if (s == "z_where") return Component::kWhere;
  if (s == "z_p") return Component::kPose;
  if (s == "z_c") return Component::kContent;
  fail(ErrorKind::kInvalidArgument, "unknown latent component '" + s + "' (expected z_back, z_where, z_p or z_c)");
}

inline const char* to_string(Component c) {
  switch (c) {
    case Component::kBack: return "z_back";
    case Component::kWhere: return "z_where";
    case Component::kPose: return "z_p";
    case Component::kContent: return "z_c";
  }
  return "?";
}

/// Flat indices of a component in the latent layout.
inline std::vector<int> component_indices(const latent::LatentLayout& l, Component c) {
  std::vector<int> idx;
  auto add = [&](int off, int len) {
    for (int j = 0; j < len; ++j) idx.push_back(off + j);
  };
  if (c == Component::kBack) add(l.back_offset(), l.k_back);
  for (int i = 0; i < l.n_objects; ++i) {
    if (c == Component::kWhere) add(l.where_offset(i), latent::kWhereDim);
    if (c == Component::kPose) add(l.pose_offset(i), l.k_pose);
    if (c == Component::kContent) add(l.content_offset(i), l.k_content);
  }
  return idx;
}

struct Interpolation {
  Tensor<float> frames;        ///< [steps, H, W, 3]
  Tensor<float> object_weight; ///< [steps, H, W]: min(1, sum of pasted masks)
  Tensor<float> recon_a, recon_b;  ///< plain reconstructions [H, W, 3]
  Tensor<float> codes;         ///< [steps, k]
};

namespace detail {

template <class T>
std::pair<Tensor<float>, Tensor<float>> decode_with_weight(const recon::ReconNet<T>& net, const Tensor<float>& row) {
  const auto& cfg = net.config();
  const auto l = latent::LatentLayout::from(cfg);
  NoGradGuard ng;
  const auto c = latent::unflatten_codes<T>(row, l);
  const auto img = latent::to_hwc(net.decode_frame(c.z_back, c.wheres, c.z_poses, c.z_contents).value());
  Tensor<float> weight({cfg.height, cfg.width});
  for (int i = 0; i < l.n_objects; ++i) {
    const auto mask = ops::paste_window(net.decode_object(c.z_poses[i], c.z_contents[i]).second, c.wheres[i], cfg.height,
                                        cfg.width).value();
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) weight.at(y, x) += static_cast<float>(mask.at(0, 0, y, x));
  }
  for (std::int64_t i = 0; i < weight.numel(); ++i) weight[i] = std::min(weight[i], 1.0f);
  return {img.reshaped({cfg.height, cfg.width, 3}), weight};
}

}  // namespace detail

/// Encode both frames, align b's slots to a's, and decode `steps` codes whose
/// selected component moves linearly from a to b. Step 0 is the plain
/// reconstruction of a.
template <class T>
Interpolation interpolate_latent(const recon::ReconNet<T>& net, const Tensor<float>& frame_a, const Tensor<float>& frame_b,
                                 Component which, int steps) {
  require(steps >= 2, ErrorKind::kInvalidArgument, "interpolation needs steps >= 2, got " + std::to_string(steps));
  const auto& cfg = net.config();
  const auto l = latent::LatentLayout::from(cfg);
  const auto a = latent::encode_frame(net, frame_a);
  const auto b_raw = latent::encode_frame(net, frame_b);
  std::vector<float> b(b_raw.size());
  latent::permute_slots(b_raw.data(), b.data(), latent::best_permutation(a.data(), b_raw.data(), l), l);
  const auto idx = component_indices(l, which);

  Interpolation out;
  out.frames = Tensor<float>({steps, cfg.height, cfg.width, 3});
  out.object_weight = Tensor<float>({steps, cfg.height, cfg.width});
  out.codes = Tensor<float>({steps, l.k()});
  const std::int64_t frame_n = static_cast<std::int64_t>(cfg.height) * cfg.width * 3;
  const std::int64_t plane_n = static_cast<std::int64_t>(cfg.height) * cfg.width;
  for (int s = 0; s < steps; ++s) {
    const float t = static_cast<float>(s) / static_cast<float>(steps - 1);
    Tensor<float> row({1, l.k()}, a);
    for (int j : idx) row[j] = (1.0f - t) * a[j] + t * b[j];
    std::copy_n(row.data(), l.k(), out.codes.data() + static_cast<std::int64_t>(s) * l.k());
    const auto [img, w] = detail::decode_with_weight(net, row);
    std::copy_n(img.data(), frame_n, out.frames.data() + s * frame_n);
    std::copy_n(w.data(), plane_n, out.object_weight.data() + s * plane_n);
  }
  out.recon_a = detail::decode_with_weight(net, Tensor<float>({1, l.k()}, a)).first;
  out.recon_b = detail::decode_with_weight(net, Tensor<float>({1, l.k()}, b)).first;
  return out;
}

/// Mean absolute difference between consecutive interpolation frames.
inline std::vector<double> step_mae(const Interpolation& in) {
  const int steps = in.frames.dim(0);
  const std::int64_t n = in.frames.numel() / steps;
  std::vector<double> out;
  for (int s = 1; s < steps; ++s) {
    double acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += std::abs(in.frames[s * n + i] - in.frames[(s - 1) * n + i]);
    out.push_back(acc / static_cast<double>(n));
  }
  return out;
}

}  // namespace hdvp::eval
