#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>

#include "hdvp/core/error.hpp"

namespace hdvp::recon {

/// Loss weights. Generator-side terms only; discriminator losses are
/// optimised separately and never enter `total`.
struct LossWeights {
  double recon = 1000.0;
  double kl = 1e-3;
  double adv_img = 0.1;
  double back = 1.0;
  double content = 1.0;
  double adv_pose = 10.0;
  double mask = 100.0;
};

struct ReconConfig {
  int height = 32;
  int width = 32;
  int sub_height = 16;
  int sub_width = 16;
  int max_objects = 1;
  int k_back = 64;
  int k_pose = 16;
  int k_content = 32;
  int total_epochs = 30;
  LossWeights weights;
  double triplet_margin = 0.5;
  double mask_loss_cutoff_fraction = 0.5;

  // architecture
  int channels = 32;
  int feature_dim = 128;
  int detector_hidden = 128;
  double min_window_size = 0.1;
  double max_window_size = 0.5;
  double init_window_size = 0.45;

  // optimisation
  double learning_rate = 5e-4;
  double disc_learning_rate = 2e-4;
  double r1_gamma = 1.0;
  double grad_clip = 10.0;
  int batch_size = 16;
  int pairs_per_video = 32;
  std::uint64_t seed = 7;

  int k_object() const { return 4 + k_pose + k_content; }
  int latent_dim() const { return k_back + max_objects * k_object(); }

  void validate() const {
    auto bad = [](const std::string& field, const std::string& m) {
      fail(ErrorKind::kConfig, "recon." + field + ": " + m);
    };
    if (height <= 0 || width <= 0 || height % 16 || width % 16) bad("height/width", "must be positive multiples of 16");
    if (sub_height <= 0 || sub_height > height) bad("sub_height", "must satisfy 0 < h <= H");
    if (sub_width <= 0 || sub_width > width) bad("sub_width", "must satisfy 0 < w <= W");
    if (max_objects < 1) bad("max_objects", "must be >= 1");
    if (k_back < 1 || k_pose < 1 || k_content < 1) bad("k_*", "latent sizes must be >= 1");
    if (total_epochs < 1) bad("total_epochs", "must be >= 1");
    const double ws[] = {weights.recon, weights.kl, weights.adv_img, weights.back, weights.content, weights.adv_pose, weights.mask};
    for (double w : ws)
      if (!(w >= 0)) bad("weights", "all loss weights must be >= 0");
    if (!(triplet_margin > 0)) bad("triplet_margin", "must be > 0");
    if (!(mask_loss_cutoff_fraction > 0 && mask_loss_cutoff_fraction <= 1)) bad("mask_loss_cutoff_fraction", "must lie in (0, 1]");
    if (channels < 1 || feature_dim < 1 || detector_hidden < 1) bad("channels", "widths must be >= 1");
    if (!(min_window_size > 0 && min_window_size < max_window_size && max_window_size <= 1))
      bad("min_window_size", "window size bounds must satisfy 0 < min < max <= 1");
    if (!(init_window_size > min_window_size && init_window_size < max_window_size))
      bad("init_window_size", "must lie strictly between min_window_size and max_window_size");
    if (!(learning_rate > 0) || !(disc_learning_rate > 0)) bad("learning_rate", "must be > 0");
    if (batch_size < 1 || pairs_per_video < 1) bad("batch_size", "batch_size and pairs_per_video must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"recon", w.recon}, {"kl", w.kl}, {"adv_img", w.adv_img}, {"back", w.back},
       {"content", w.content}, {"adv_pose", w.adv_pose}, {"mask", w.mask}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.recon = j.value("recon", w.recon);
  w.kl = j.value("kl", w.kl);
  w.adv_img = j.value("adv_img", w.adv_img);
  w.back = j.value("back", w.back);
  w.content = j.value("content", w.content);
  w.adv_pose = j.value("adv_pose", w.adv_pose);
  w.mask = j.value("mask", w.mask);
}

inline void to_json(nlohmann::json& j, const ReconConfig& c) {
  j = {{"height", c.height},
       {"width", c.width},
       {"sub_height", c.sub_height},
       {"sub_width", c.sub_width},
       {"max_objects", c.max_objects},
       {"k_back", c.k_back},
       {"k_pose", c.k_pose},
       {"k_content", c.k_content},
       {"total_epochs", c.total_epochs},
       {"weights", c.weights},
       {"triplet_margin", c.triplet_margin},
       {"mask_loss_cutoff_fraction", c.mask_loss_cutoff_fraction},
       {"channels", c.channels},
       {"feature_dim", c.feature_dim},
       {"detector_hidden", c.detector_hidden},
       {"min_window_size", c.min_window_size},
       {"max_window_size", c.max_window_size},
       {"init_window_size", c.init_window_size},
       {"learning_rate", c.learning_rate},
       {"disc_learning_rate", c.disc_learning_rate},
       {"r1_gamma", c.r1_gamma},
       {"grad_clip", c.grad_clip},
       {"batch_size", c.batch_size},
       {"pairs_per_video", c.pairs_per_video},
       {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ReconConfig& c) {
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.sub_height = j.value("sub_height", c.sub_height);
  c.sub_width = j.value("sub_width", c.sub_width);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.k_back = j.value("k_back", c.k_back);
  c.k_pose = j.value("k_pose", c.k_pose);
  c.k_content = j.value("k_content", c.k_content);
  c.total_epochs = j.value("total_epochs", c.total_epochs);
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
  c.mask_loss_cutoff_fraction = j.value("mask_loss_cutoff_fraction", c.mask_loss_cutoff_fraction);
  c.channels = j.value("channels", c.channels);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.detector_hidden = j.value("detector_hidden", c.detector_hidden);
  c.min_window_size = j.value("min_window_size", c.min_window_size);
  c.max_window_size = j.value("max_window_size", c.max_window_size);
  c.init_window_size = j.value("init_window_size", c.init_window_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.disc_learning_rate = j.value("disc_learning_rate", c.disc_learning_rate);
  c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.pairs_per_video = j.value("pairs_per_video", c.pairs_per_video);
  c.seed = j.value("seed", c.seed);
}

}  // namespace hdvp::recon
