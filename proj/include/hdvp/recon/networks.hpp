#pragma once

// Stage-1 networks: background VAE, object VAE (CoordConv frame encoder,
// recurrent detector, pose/content encoders, spatial broadcast decoder), the
// mask compositor, and the two discriminators.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hdvp/core/nn.hpp"
#include "hdvp/core/sampler.hpp"
#include "hdvp/recon/config.hpp"

namespace hdvp::recon {

template <class T>
struct Posterior {
  Var<T> mu, logvar;
};

namespace detail {

inline int halve4(int n) {
  for (int i = 0; i < 4; ++i) n = (n + 1) / 2;
  return n;
}

}  // namespace detail

/// Four stride-2 conv blocks, flattened into a linear head of width `out`.
template <class T>
struct ConvEncoder {
  std::vector<nn::Conv2d<T>> convs;
  nn::Linear<T> head;

  ConvEncoder() = default;
  ConvEncoder(int in_ch, int ch, int h, int w, int out, Rng& rng) {
    int c = in_ch;
    for (int i = 0; i < 4; ++i) {
      convs.emplace_back(c, ch, 3, 2, 1, rng);
      c = ch;
    }
    head = nn::Linear<T>(ch * detail::halve4(h) * detail::halve4(w), out, rng);
  }
  Var<T> operator()(Var<T> x) const {
    for (const auto& c : convs) x = ops::leaky_relu(c(x));
    return head(ops::reshape(x, {x.dim(0), static_cast<int>(x.numel() / x.dim(0))}));
  }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(ps, prefix + ".conv" + std::to_string(i));
    head.collect(ps, prefix + ".head");
  }
};

/// Splits a [B, 2k] head output into a Gaussian posterior.
template <class T>
Posterior<T> split_posterior(const Var<T>& out, int k) {
  return {ops::slice(out, 1, 0, k), ops::slice(out, 1, k, k)};
}

/// Linear projection to a coarse grid, then four (upsample x2, conv) stages.
template <class T>
struct UpsampleDecoder {
  nn::Linear<T> head;
  std::vector<nn::Conv2d<T>> convs;
  int ch = 0, gh = 0, gw = 0;

  UpsampleDecoder() = default;
  UpsampleDecoder(int k, int ch_, int h, int w, int out_ch, Rng& rng) : ch(ch_), gh(h / 16), gw(w / 16) {
    head = nn::Linear<T>(k, ch * gh * gw, rng);
    for (int i = 0; i < 4; ++i) convs.emplace_back(ch, i == 3 ? out_ch : ch, 3, 1, 1, rng);
  }
  Var<T> operator()(const Var<T>& z) const {
    auto x = ops::reshape(ops::leaky_relu(head(z)), {z.dim(0), ch, gh, gw});
    for (std::size_t i = 0; i < convs.size(); ++i) {
      x = convs[i](ops::upsample2x(x));
      if (i + 1 < convs.size()) x = ops::leaky_relu(x);
    }
    return ops::sigmoid(x);
  }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    head.collect(ps, prefix + ".head");
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(ps, prefix + ".conv" + std::to_string(i));
  }
};

/// Tiles the code over an h x w grid with two coordinate channels, then
/// four 3x3 convolutions. Output channels: 3 colour + 1 mask, all sigmoid.
template <class T>
struct SpatialBroadcastDecoder {
  std::vector<nn::Conv2d<T>> convs;
  int h = 0, w = 0;

  SpatialBroadcastDecoder() = default;
  SpatialBroadcastDecoder(int k, int ch, int h_, int w_, Rng& rng) : h(h_), w(w_) {
    int c = k + 2;
    for (int i = 0; i < 4; ++i) {
      convs.emplace_back(c, i == 3 ? 4 : ch, 3, 1, 1, rng);
      c = ch;
    }
  }
  std::pair<Var<T>, Var<T>> operator()(const Var<T>& z) const {
    const int bsz = z.dim(0);
    auto x = ops::concat<T>({ops::broadcast_spatial(z, h, w), Var<T>::constant(ops::coordinate_channels<T>(bsz, h, w))}, 1);
    for (std::size_t i = 0; i < convs.size(); ++i) {
      x = convs[i](x);
      if (i + 1 < convs.size()) x = ops::leaky_relu(x);
    }
    auto y = ops::sigmoid(x);
    return {ops::slice(y, 1, 0, 3), ops::slice(y, 1, 3, 1)};
  }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(ps, prefix + ".conv" + std::to_string(i));
  }
};

/// Recurrent detector emitting one window code per step from a whole-frame feature.
template <class T>
struct Detector {
  nn::LstmCell<T> cell;
  nn::Linear<T> out;
  T min_size = T(0.1), max_size = T(1);

  Detector() = default;
  Detector(int feature_dim, int hidden, T min_size_, T max_size_, T init_size, Rng& rng)
      : cell(feature_dim + 4, hidden, rng), out(hidden, 4, rng), min_size(min_size_), max_size(max_size_) {
    auto& w = out.weight.mutable_value();
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] *= T(0.1);
    // size logits start at init_size
    const T frac = (init_size - min_size) / (max_size - min_size);
    out.bias.mutable_value()[2] = out.bias.mutable_value()[3] = std::log(frac / (T(1) - frac));
  }

  /// Squashes raw [B, 4] outputs into (cx, cy) in (-1, 1), (sx, sy) in (min_size, max_size).
  Var<T> squash(const Var<T>& raw) const {
    auto center = ops::tanh(ops::slice(raw, 1, 0, 2));
    auto size = ops::add_scalar(ops::scale(ops::sigmoid(ops::slice(raw, 1, 2, 2)), max_size - min_size), min_size);
    return ops::concat<T>({center, size}, 1);
  }

  std::vector<Var<T>> operator()(const Var<T>& feature, int n) const {
    const int bsz = feature.dim(0);
    auto state = cell.zero_state(bsz);
    Var<T> prev = Var<T>::constant(Tensor<T>({bsz, 4}));
    std::vector<Var<T>> result;
    for (int i = 0; i < n; ++i) {
      state = cell(ops::concat<T>({feature, prev}, 1), state);
      prev = squash(out(state.h));
      result.push_back(prev);
    }
    return result;
  }
  void collect(ParamSet<T>& ps, const std::string& prefix) const {
    cell.collect(ps, prefix + ".lstm");
    out.collect(ps, prefix + ".out");
  }
};

/// Merge background and pasted objects:
///   out = max(0, 1 - S) * background + sum_i m_i * y_i / max(1, S),  S = sum_i m_i.
/// For S <= 1 this is the plain alpha merge; for S > 1 the background weight
/// is clamped at zero and the object weights renormalised to sum to one.
template <class T>
Var<T> composite(const Var<T>& background, const std::vector<Var<T>>& images, const std::vector<Var<T>>& masks) {
  require(images.size() == masks.size(), ErrorKind::kShape, "composite: image/mask count mismatch");
  const int bsz = background.dim(0), c = background.dim(1), h = background.dim(2), w = background.dim(3);
  if (images.empty()) return background;
  auto expand = [&](const Var<T>& m) {
    require(m.shape() == Shape{bsz, 1, h, w}, ErrorKind::kShape, "composite: mask must be [B,1,H,W], got " + shape_str(m.shape()));
    std::vector<Var<T>> reps(static_cast<std::size_t>(c), m);
    return ops::concat<T>(reps, 1);
  };
  Var<T> mask_sum = masks[0];
  for (std::size_t i = 1; i < masks.size(); ++i) mask_sum = ops::add(mask_sum, masks[i]);
  Var<T> weighted;
  for (std::size_t i = 0; i < images.size(); ++i) {
    check_same_shape(images[i].shape(), background.shape(), "composite");
    auto term = ops::mul(expand(masks[i]), images[i]);
    weighted = weighted.defined() ? ops::add(weighted, term) : term;
  }
  auto bg_coef = ops::relu(ops::add_scalar(ops::neg(mask_sum), T(1)));
  auto norm = ops::clamp_min(mask_sum, T(1));
  return ops::add(ops::mul(expand(bg_coef), background), ops::div(weighted, expand(norm)));
}

/// One object slot of an encoded frame.
template <class T>
struct SlotCode {
  Var<T> where;  ///< [B, 4]
  Posterior<T> pose, content;
  Var<T> z_pose, z_content;  ///< sampled or posterior means
};

template <class T>
struct FrameCodeVars {
  Posterior<T> back;
  Var<T> z_back;
  std::vector<SlotCode<T>> slots;
};

/// Stage-1 generator: every network whose parameters the reconstruction loss updates.
template <class T>
class ReconNet {
 public:
  explicit ReconNet(const ReconConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int ch = cfg.channels;
    back_enc_ = ConvEncoder<T>(3, ch, cfg.height, cfg.width, 2 * cfg.k_back, rng);
    back_dec_ = UpsampleDecoder<T>(cfg.k_back, ch, cfg.height, cfg.width, 3, rng);
    frame_enc_ = ConvEncoder<T>(8, ch, cfg.height, cfg.width, cfg.feature_dim, rng);
    detector_ = Detector<T>(cfg.feature_dim, cfg.detector_hidden, static_cast<T>(cfg.min_window_size),
                            static_cast<T>(cfg.max_window_size), static_cast<T>(cfg.init_window_size), rng);
    pose_enc_ = ConvEncoder<T>(3, ch, cfg.sub_height, cfg.sub_width, 2 * cfg.k_pose, rng);
    content_enc_ = ConvEncoder<T>(3, ch, cfg.sub_height, cfg.sub_width, 2 * cfg.k_content, rng);
    obj_dec_ = SpatialBroadcastDecoder<T>(cfg.k_pose + cfg.k_content, ch, cfg.sub_height, cfg.sub_width, rng);
  }

  const ReconConfig& config() const { return cfg_; }

  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    back_enc_.collect(ps, "back_enc");
    back_dec_.collect(ps, "back_dec");
    frame_enc_.collect(ps, "frame_enc");
    detector_.collect(ps, "detector");
    pose_enc_.collect(ps, "pose_enc");
    content_enc_.collect(ps, "content_enc");
    obj_dec_.collect(ps, "obj_dec");
    return ps;
  }

  void check_frame(const Var<T>& x, const char* what) const {
    require(x.shape().size() == 4 && x.dim(1) == 3 && x.dim(2) == cfg_.height && x.dim(3) == cfg_.width,
            ErrorKind::kShape,
            std::string(what) + ": expected [B,3," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                "], got " + shape_str(x.shape()));
  }

  Posterior<T> encode_background(const Var<T>& frame) const {
    check_frame(frame, "encode_background");
    return split_posterior(back_enc_(frame), cfg_.k_back);
  }

  Var<T> decode_background(const Var<T>& z_back) const {
    require(z_back.shape().size() == 2 && z_back.dim(1) == cfg_.k_back, ErrorKind::kShape,
            "decode_background: expected [B," + std::to_string(cfg_.k_back) + "], got " + shape_str(z_back.shape()));
    return back_dec_(z_back);
  }

  /// N window codes from the frame and its difference against the decoded background.
  std::vector<Var<T>> detect_objects(const Var<T>& frame, const Var<T>& diff) const {
    check_frame(frame, "detect_objects");
    check_same_shape(frame.shape(), diff.shape(), "detect_objects(frame, diff)");
    const int bsz = frame.dim(0);
    auto input = ops::concat<T>({frame, diff, Var<T>::constant(ops::coordinate_channels<T>(bsz, cfg_.height, cfg_.width))}, 1);
    auto feature = ops::leaky_relu(frame_enc_(input));
    return detector_(feature, cfg_.max_objects);
  }

  Var<T> crop_object(const Var<T>& frame, const Var<T>& where) const {
    return ops::crop_window(frame, where, cfg_.sub_height, cfg_.sub_width);
  }

  std::pair<Posterior<T>, Posterior<T>> encode_object(const Var<T>& sub) const {
    require(sub.shape().size() == 4 && sub.dim(1) == 3 && sub.dim(2) == cfg_.sub_height && sub.dim(3) == cfg_.sub_width,
            ErrorKind::kShape, "encode_object: expected [B,3,h,w] sub-image, got " + shape_str(sub.shape()));
    return {split_posterior(pose_enc_(sub), cfg_.k_pose), split_posterior(content_enc_(sub), cfg_.k_content)};
  }

  /// (object image [B,3,h,w], mask [B,1,h,w]).
  std::pair<Var<T>, Var<T>> decode_object(const Var<T>& z_pose, const Var<T>& z_content) const {
    require(z_pose.shape().size() == 2 && z_pose.dim(1) == cfg_.k_pose && z_content.shape().size() == 2 &&
                z_content.dim(1) == cfg_.k_content && z_pose.dim(0) == z_content.dim(0),
            ErrorKind::kShape, "decode_object: code shapes " + shape_str(z_pose.shape()) + " / " + shape_str(z_content.shape()));
    return obj_dec_(ops::concat<T>({z_pose, z_content}, 1));
  }

  /// Paste decoded objects at their windows and merge over the background.
  Var<T> render(const Var<T>& background, const std::vector<std::pair<Var<T>, Var<T>>>& objects,
                const std::vector<Var<T>>& wheres) const {
    std::vector<Var<T>> images, masks;
    for (std::size_t i = 0; i < objects.size(); ++i) {
      images.push_back(ops::paste_window(objects[i].first, wheres[i], cfg_.height, cfg_.width));
      masks.push_back(ops::paste_window(objects[i].second, wheres[i], cfg_.height, cfg_.width));
    }
    return composite(background, images, masks);
  }

  /// Encode the object slots of `frame` given the background it should be
  /// differenced against. `eps` supplies reparameterisation noise; null means
  /// posterior means are used as codes.
  std::vector<SlotCode<T>> encode_slots(const Var<T>& frame, const Var<T>& background, Rng* eps) const {
    auto diff = ops::sub(frame, ops::detach(background));
    auto wheres = detect_objects(frame, diff);
    std::vector<SlotCode<T>> slots;
    for (auto& wv : wheres) {
      SlotCode<T> s;
      s.where = wv;
      auto [pose, content] = encode_object(crop_object(frame, wv));
      s.pose = pose;
      s.content = content;
      s.z_pose = eps ? ops::reparameterize(pose.mu, pose.logvar, randn<T>(pose.mu.shape(), *eps)) : pose.mu;
      s.z_content = eps ? ops::reparameterize(content.mu, content.logvar, randn<T>(content.mu.shape(), *eps)) : content.mu;
      slots.push_back(std::move(s));
    }
    return slots;
  }

  /// Deterministic full encoding (posterior means), background differenced
  /// against the frame's own decoded background.
  FrameCodeVars<T> encode_frame(const Var<T>& frame) const {
    FrameCodeVars<T> fc;
    fc.back = encode_background(frame);
    fc.z_back = fc.back.mu;
    fc.slots = encode_slots(frame, decode_background(fc.z_back), nullptr);
    return fc;
  }

  /// Decode a full frame from codes.
  Var<T> decode_frame(const Var<T>& z_back, const std::vector<Var<T>>& wheres, const std::vector<Var<T>>& z_poses,
                      const std::vector<Var<T>>& z_contents) const {
    std::vector<std::pair<Var<T>, Var<T>>> objs;
    for (std::size_t i = 0; i < wheres.size(); ++i) objs.push_back(decode_object(z_poses[i], z_contents[i]));
    return render(decode_background(z_back), objs, wheres);
  }

 private:
  ReconConfig cfg_;
  ConvEncoder<T> back_enc_;
  UpsampleDecoder<T> back_dec_;
  ConvEncoder<T> frame_enc_;
  Detector<T> detector_;
  ConvEncoder<T> pose_enc_;
  ConvEncoder<T> content_enc_;
  SpatialBroadcastDecoder<T> obj_dec_;
};

/// Pose discriminator: probability that two pose codes come from unrelated videos.
template <class T>
struct PoseDiscriminator {
  nn::Mlp3<T> mlp;

  PoseDiscriminator() = default;
  PoseDiscriminator(int k_pose, Rng& rng) : mlp(2 * k_pose, 128, 64, 1, rng) {}
  Var<T> logits(const Var<T>& a, const Var<T>& b) const { return mlp(ops::concat<T>({a, b}, 1)); }
  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    mlp.collect(ps, "pose_dis");
    return ps;
  }
};

/// Image discriminator: four stride-2 conv blocks and a linear logit.
template <class T>
struct ImageDiscriminator {
  ConvEncoder<T> net;

  ImageDiscriminator() = default;
  ImageDiscriminator(int ch, int h, int w, Rng& rng) : net(3, ch, h, w, 1, rng) {}
  Var<T> logits(const Var<T>& x) const { return net(x); }
  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    net.collect(ps, "img_dis");
    return ps;
  }
};

}  // namespace hdvp::recon
