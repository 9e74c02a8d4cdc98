#pragma once

// Stage-1 training: pair forward pass, loss assembly, alternating
// generator/discriminator updates, per-epoch JSON-lines log and checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hdvp/dataset/dataset.hpp"
#include "hdvp/io/checkpoint.hpp"
#include "hdvp/recon/losses.hpp"
#include "hdvp/recon/networks.hpp"

namespace hdvp::recon {

inline constexpr const char* kReconCheckpointKind = "recon";

/// Everything the loss terms need from one (x, x', x'') forward pass.
template <class T>
struct PairForward {
  Posterior<T> back_x, back_xp;
  Var<T> z_back_x, z_back_xp;
  Var<T> background_x;  ///< decoded from z_back_xp (swapped)
  std::vector<SlotCode<T>> slots_x, slots_xp, slots_xpp;
  std::vector<std::vector<int>> nearest, second;  ///< [slot][row] -> slot of x'; second is -1 if N = 1
  std::vector<T> alpha;                           ///< per row
  std::vector<Var<T>> mixed_content;
  std::vector<std::pair<Var<T>, Var<T>>> objects;  ///< decoded (image, mask) per slot
  Var<T> recon_x;
};

template <class T>
std::vector<double> row_of(const Var<T>& v, int b) {
  std::vector<double> out;
  for (int j = 0; j < v.dim(1); ++j) out.push_back(static_cast<double>(v.value().at(b, j)));
  return out;
}

/// x, x' from one video; x'' (may be undefined) from an unrelated one.
/// `rng` drives reparameterisation noise and alpha.
template <class T>
PairForward<T> forward_pair(const ReconNet<T>& net, const Var<T>& x, const Var<T>& xp, const Var<T>& xpp, int epoch,
                            Rng& rng) {
  const auto& cfg = net.config();
  net.check_frame(x, "x");
  net.check_frame(xp, "x'");
  check_same_shape(x.shape(), xp.shape(), "x / x'");
  const int bsz = x.dim(0);
  const int n = cfg.max_objects;
  PairForward<T> f;
  f.back_x = net.encode_background(x);
  f.back_xp = net.encode_background(xp);
  f.z_back_x = ops::reparameterize(f.back_x.mu, f.back_x.logvar, randn<T>(f.back_x.mu.shape(), rng));
  f.z_back_xp = ops::reparameterize(f.back_xp.mu, f.back_xp.logvar, randn<T>(f.back_xp.mu.shape(), rng));
  f.background_x = net.decode_background(f.z_back_xp);
  Var<T> background_xp;
  {
    // only ever used detached, as the difference reference for x'
    NoGradGuard ng;
    background_xp = net.decode_background(f.z_back_x);
  }
  f.slots_x = net.encode_slots(x, f.background_x, &rng);
  f.slots_xp = net.encode_slots(xp, background_xp, &rng);
  if (xpp.defined()) {
    net.check_frame(xpp, "x''");
    NoGradGuard ng;
    const auto bg = net.decode_background(net.encode_background(xpp).mu);
    f.slots_xpp = net.encode_slots(xpp, bg, nullptr);
  }

  f.nearest.assign(n, std::vector<int>(bsz));
  f.second.assign(n, std::vector<int>(bsz, -1));
  for (int b = 0; b < bsz; ++b) {
    std::vector<std::vector<double>> others;
    for (const auto& s : f.slots_xp) others.push_back(row_of(s.content.mu, b));
    for (int i = 0; i < n; ++i) {
      const auto [j1, j2] = two_nearest(row_of(f.slots_x[i].content.mu, b), others);
      f.nearest[i][b] = j1;
      f.second[i][b] = j2;
    }
  }
  f.alpha.resize(bsz);
  for (int b = 0; b < bsz; ++b) f.alpha[b] = static_cast<T>(sample_alpha(epoch, cfg.total_epochs, rng));

  std::vector<Var<T>> xp_content, wheres;
  for (const auto& s : f.slots_xp) xp_content.push_back(s.z_content);
  for (int i = 0; i < n; ++i) {
    f.mixed_content.push_back(mix_rows(f.slots_x[i].z_content, pick_rows(xp_content, f.nearest[i]), f.alpha));
    f.objects.push_back(net.decode_object(f.slots_x[i].z_pose, f.mixed_content[i]));
    wheres.push_back(f.slots_x[i].where);
  }
  f.recon_x = net.render(f.background_x, f.objects, wheres);
  return f;
}

/// Generator-side loss graph plus the scalar report.
template <class T>
struct GeneratorLoss {
  Var<T> total;
  LossReport report;
};

namespace detail {

inline void check_finite(const LossReport& r) {
  const std::pair<const char*, double> items[] = {
      {"recon", r.recon},         {"kl", r.kl},           {"adv_img_G", r.adv_img_G},
      {"adv_img_D", r.adv_img_D}, {"l_back", r.l_back},   {"l_content", r.l_content},
      {"l_adv_pose_E", r.l_adv_pose_E}, {"l_adv_pose_D", r.l_adv_pose_D}, {"l_mask", r.l_mask},
      {"total", r.total}};
  for (const auto& [name, v] : items)
    if (!std::isfinite(v)) fail(ErrorKind::kDivergence, std::string("non-finite loss component '") + name + "'");
}

}  // namespace detail

/// Assemble every generator-side term. Discriminator terms are filled in by
/// the discriminator step; when `pose_dis`/`img_dis` are null the matching
/// adversarial terms are skipped.
template <class T>
GeneratorLoss<T> compute_losses(const PairForward<T>& f, const Var<T>& x, int epoch, const ReconConfig& cfg,
                                const PoseDiscriminator<T>* pose_dis, const ImageDiscriminator<T>* img_dis) {
  const int n = cfg.max_objects;
  const int bsz = x.dim(0);
  const auto& w = cfg.weights;
  GeneratorLoss<T> out;
  auto& rep = out.report;
  auto add_term = [&](Var<T> term, double weight, double& slot) {
    slot = static_cast<double>(term.item());
    if (weight == 0) return;
    auto weighted = ops::scale(term, static_cast<T>(weight));
    out.total = out.total.defined() ? ops::add(out.total, weighted) : weighted;
  };

  add_term(ops::mean(ops::square(ops::sub(f.recon_x, x))), w.recon, rep.recon);

  auto kl = ops::add(ops::gaussian_kl(f.back_x.mu, f.back_x.logvar, bsz), ops::gaussian_kl(f.back_xp.mu, f.back_xp.logvar, bsz));
  for (const auto* slots : {&f.slots_x, &f.slots_xp})
    for (const auto& s : *slots)
      kl = ops::add(kl, ops::add(ops::gaussian_kl(s.pose.mu, s.pose.logvar, bsz),
                                 ops::gaussian_kl(s.content.mu, s.content.logvar, bsz)));
  add_term(kl, w.kl, rep.kl);

  add_term(ops::mean(row_sqdist(f.z_back_x, f.z_back_xp)), w.back, rep.l_back);

  const bool need_second_video = n == 1 && w.content > 0;
  if ((w.adv_pose > 0 || need_second_video) && f.slots_xpp.empty())
    fail(ErrorKind::kConfig, "a frame from an unrelated video is required for the pose adversary / single-slot triplet");

  std::vector<Var<T>> xp_content, xp_pose;
  for (const auto& s : f.slots_xp) {
    xp_content.push_back(s.z_content);
    xp_pose.push_back(s.z_pose);
  }
  {
    Var<T> lc;
    for (int i = 0; i < n; ++i) {
      const auto& zc = f.slots_x[i].z_content;
      auto d_pos = row_sqdist(zc, pick_rows(xp_content, f.nearest[i]));
      Var<T> negative;
      if (n >= 2) {
        negative = pick_rows(xp_content, f.second[i]);
      } else if (!f.slots_xpp.empty()) {
        negative = f.slots_xpp[0].z_content;
      }
      if (!negative.defined()) continue;
      auto term = triplet_loss(d_pos, row_sqdist(zc, negative), static_cast<T>(cfg.triplet_margin));
      lc = lc.defined() ? ops::add(lc, term) : term;
    }
    if (lc.defined()) add_term(ops::scale(lc, T(1) / static_cast<T>(n)), w.content, rep.l_content);
  }

  if (pose_dis && !f.slots_xpp.empty()) {
    Var<T> le;
    for (int i = 0; i < n; ++i) {
      auto term = pose_gen_loss(pose_dis->logits(f.slots_x[i].z_pose, pick_rows(xp_pose, f.nearest[i])));
      le = le.defined() ? ops::add(le, term) : term;
    }
    add_term(ops::scale(le, T(1) / static_cast<T>(n)), w.adv_pose, rep.l_adv_pose_E);
  }

  if (img_dis) add_term(image_gen_loss(img_dis->logits(f.recon_x)), w.adv_img, rep.adv_img_G);

  {
    Var<T> lm;
    double mask_sum = 0;
    for (const auto& [img, mask] : f.objects) {
      auto term = mask_loss(mask);
      lm = lm.defined() ? ops::add(lm, term) : term;
      double s = 0;
      for (std::int64_t i = 0; i < mask.numel(); ++i) s += mask.value()[i];
      mask_sum += s / static_cast<double>(mask.numel());
    }
    rep.mask_mean = mask_sum / n;
    lm = ops::scale(lm, T(1) / static_cast<T>(n));
    const bool active = epoch < cfg.mask_loss_cutoff_fraction * cfg.total_epochs;
    add_term(lm, active ? w.mask : 0.0, rep.l_mask);
  }

  rep.total = out.total.defined() ? static_cast<double>(out.total.item()) : 0.0;
  if (!out.total.defined()) out.total = Var<T>::constant(Tensor<T>({1}));
  return out;
}

/// Discriminator-side losses on detached inputs; returns (image term, pose term).
template <class T>
std::pair<Var<T>, Var<T>> discriminator_losses(const PairForward<T>& f, const Var<T>& x, const ReconConfig& cfg,
                                               const PoseDiscriminator<T>* pose_dis, const ImageDiscriminator<T>* img_dis,
                                               Rng& rng) {
  Var<T> li, lp;
  if (img_dis) {
    li = image_dis_loss(img_dis->logits(ops::detach(x)), img_dis->logits(ops::detach(f.recon_x)));
    if (cfg.r1_gamma > 0) {
      auto r1 = r1_penalty<T>([&](const Var<T>& v) { return img_dis->logits(v); }, x.value(), rng);
      li = ops::add(li, ops::scale(r1, static_cast<T>(cfg.r1_gamma / 2)));
    }
  }
  if (pose_dis && !f.slots_xpp.empty()) {
    const int n = cfg.max_objects;
    std::vector<Var<T>> xp_pose;
    for (const auto& s : f.slots_xp) xp_pose.push_back(ops::detach(s.z_pose));
    for (int i = 0; i < n; ++i) {
      const auto zp = ops::detach(f.slots_x[i].z_pose);
      auto term = pose_dis_loss(pose_dis->logits(zp, ops::detach(f.slots_xpp[i].z_pose)),
                                pose_dis->logits(zp, pick_rows(xp_pose, f.nearest[i])));
      lp = lp.defined() ? ops::add(lp, term) : term;
    }
    lp = ops::scale(lp, T(1) / static_cast<T>(n));
  }
  return {li, lp};
}

/// Frames of every video of a dataset, held in memory as [T,H,W,3].
struct VideoBank {
  std::vector<Tensor<float>> frames;

  static VideoBank load(const dataset::DatasetManifest& m) {
    VideoBank bank;
    for (int i = 0; i < m.video_count; ++i) bank.frames.push_back(dataset::read_video(m.video_path(i)).frames);
    return bank;
  }
  int size() const { return static_cast<int>(frames.size()); }
  int length(int v) const { return frames[v].dim(0); }
};

/// Copy frame t of a [T,H,W,3] tensor into row b of a [B,3,H,W] tensor.
template <class T>
void put_frame_chw(Tensor<T>& dst, int b, const Tensor<float>& video, int t) {
  const int h = video.dim(1), w = video.dim(2);
  const float* src = video.data() + static_cast<std::int64_t>(t) * h * w * 3;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) dst.at(b, c, y, x) = static_cast<T>(src[(y * w + x) * 3 + c]);
}

struct TrainSample {
  int video, t1, t2, other_video, t_other;
};

/// One epoch's sample list: pairs_per_video frame pairs per video, shuffled.
inline std::vector<TrainSample> epoch_samples(const VideoBank& bank, int pairs_per_video, Rng& rng) {
  std::vector<TrainSample> out;
  const int nv = bank.size();
  for (int v = 0; v < nv; ++v)
    for (int k = 0; k < pairs_per_video; ++k) {
      auto [t1, t2] = dataset::sample_frame_pair(bank.length(v), rng);
      int o = v;
      if (nv > 1) {
        o = static_cast<int>(std::uniform_int_distribution<int>(0, nv - 2)(rng));
        if (o >= v) ++o;
      }
      const int to = std::uniform_int_distribution<int>(0, bank.length(o) - 1)(rng);
      out.push_back({v, t1, t2, o, to});
    }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Networks and optimiser state for stage 1.
template <class T>
class ReconTrainer {
 public:
  explicit ReconTrainer(const ReconConfig& cfg)
      : cfg_(cfg),
        net_(cfg),
        rng_(cfg.seed ^ 0x5eedull),
        dis_rng_(cfg.seed + 101),
        pose_dis_(cfg.k_pose, dis_rng_),
        img_dis_(cfg.channels, cfg.height, cfg.width, dis_rng_),
        opt_g_(net_.parameters(), static_cast<T>(cfg.learning_rate), T(0.5), T(0.999)),
        opt_pose_(pose_dis_.parameters(), static_cast<T>(cfg.disc_learning_rate), T(0.5), T(0.999)),
        opt_img_(img_dis_.parameters(), static_cast<T>(cfg.disc_learning_rate), T(0.5), T(0.999)) {}

  const ReconNet<T>& net() const { return net_; }
  ReconNet<T>& net() { return net_; }
  Rng& rng() { return rng_; }

  /// One generator update followed by one discriminator update.
  LossReport step(const Tensor<T>& x, const Tensor<T>& xp, const Tensor<T>& xpp, int epoch) {
    const bool use_pose = cfg_.weights.adv_pose > 0;
    const bool use_img = cfg_.weights.adv_img > 0;
    auto xv = Var<T>::constant(x);
    auto f = forward_pair(net_, xv, Var<T>::constant(xp), xpp.numel() ? Var<T>::constant(xpp) : Var<T>(), epoch, rng_);
    auto g = compute_losses(f, xv, epoch, cfg_, use_pose ? &pose_dis_ : nullptr, use_img ? &img_dis_ : nullptr);
    auto [li, lp] = discriminator_losses(f, xv, cfg_, use_pose ? &pose_dis_ : nullptr, use_img ? &img_dis_ : nullptr, rng_);
    if (li.defined()) g.report.adv_img_D = static_cast<double>(li.item());
    if (lp.defined()) g.report.l_adv_pose_D = static_cast<double>(lp.item());
    detail::check_finite(g.report);

    opt_g_.zero_grad();
    if (g.total.requires_grad()) backward(g.total);
    opt_g_.step(static_cast<T>(cfg_.grad_clip));
    if (li.defined()) {
      opt_img_.zero_grad();
      backward(li);
      opt_img_.step(static_cast<T>(cfg_.grad_clip));
    }
    if (lp.defined()) {
      opt_pose_.zero_grad();
      backward(lp);
      opt_pose_.step(static_cast<T>(cfg_.grad_clip));
    }
    return g.report;
  }

 private:
  ReconConfig cfg_;
  ReconNet<T> net_;
  Rng rng_, dis_rng_;
  PoseDiscriminator<T> pose_dis_;
  ImageDiscriminator<T> img_dis_;
  Adam<T> opt_g_, opt_pose_, opt_img_;
};

struct EpochReport {
  int epoch = 0;
  LossReport mean;
  double seconds = 0;
};

inline void accumulate(LossReport& acc, const LossReport& r, double wgt) {
  acc.recon += wgt * r.recon;
  acc.kl += wgt * r.kl;
  acc.adv_img_G += wgt * r.adv_img_G;
  acc.adv_img_D += wgt * r.adv_img_D;
  acc.l_back += wgt * r.l_back;
  acc.l_content += wgt * r.l_content;
  acc.l_adv_pose_E += wgt * r.l_adv_pose_E;
  acc.l_adv_pose_D += wgt * r.l_adv_pose_D;
  acc.l_mask += wgt * r.l_mask;
  acc.total += wgt * r.total;
  acc.mask_mean += wgt * r.mask_mean;
}

struct TrainOptions {
  fs::path log_path;  ///< JSON lines, truncated at start; empty disables
  std::function<void(const EpochReport&)> on_epoch;
};

/// Train for cfg.total_epochs epochs and write the checkpoint to out_path.
inline ReconNet<float> train_stage1(const dataset::DatasetManifest& manifest, const ReconConfig& cfg,
                                    const fs::path& out_path, const TrainOptions& opts = {}) {
  cfg.validate();
  require(manifest.spec.frame_height == cfg.height && manifest.spec.frame_width == cfg.width, ErrorKind::kConfig,
          "recon.height/width do not match the dataset frame size");
  const auto bank = VideoBank::load(manifest);
  ReconTrainer<float> trainer(cfg);
  Rng data_rng(cfg.seed);
  if (!opts.log_path.empty()) io::write_text(opts.log_path, "");
  const int h = cfg.height, w = cfg.width;
  for (int e = 0; e < cfg.total_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto samples = epoch_samples(bank, cfg.pairs_per_video, data_rng);
    LossReport acc;
    for (std::size_t s = 0; s < samples.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const int bsz = static_cast<int>(std::min<std::size_t>(cfg.batch_size, samples.size() - s));
      Tensor<float> x({bsz, 3, h, w}), xp({bsz, 3, h, w}), xpp({bsz, 3, h, w});
      for (int b = 0; b < bsz; ++b) {
        const auto& smp = samples[s + static_cast<std::size_t>(b)];
        put_frame_chw(x, b, bank.frames[smp.video], smp.t1);
        put_frame_chw(xp, b, bank.frames[smp.video], smp.t2);
        put_frame_chw(xpp, b, bank.frames[smp.other_video], smp.t_other);
      }
      const auto r = trainer.step(x, xp, xpp, e);
      accumulate(acc, r, static_cast<double>(bsz) / static_cast<double>(samples.size()));
    }
    EpochReport er{e + 1, acc, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    if (!opts.log_path.empty()) {
      nlohmann::json j = acc;
      j["epoch"] = er.epoch;
      j["seconds"] = er.seconds;
      io::append_line(opts.log_path, j.dump());
    }
    if (opts.on_epoch) opts.on_epoch(er);
  }
  io::save_checkpoint(out_path, kReconCheckpointKind, cfg.total_epochs, nlohmann::json(cfg), trainer.net().parameters());
  return trainer.net();
}

/// Rebuild a network from a stage-1 checkpoint.
template <class T = float>
ReconNet<T> load_recon(const fs::path& path) {
  const auto c = io::read_checkpoint(path);
  require(c.kind == kReconCheckpointKind, ErrorKind::kIncompatible, "checkpoint kind '" + c.kind + "' is not a stage-1 model");
  ReconNet<T> net(c.config.get<ReconConfig>());
  io::load_parameters(c, net.parameters());
  return net;
}

}  // namespace hdvp::recon
