#pragma once

// Frame-level probe network and per-timestep scoring of predicted futures.
// The probe regresses digit sum, position sum and pixel-value sum from an
// image; a prediction is scored by applying it to each generated frame.

#include <array>
#include <string>
#include <vector>

#include "hdvp/eval/probe.hpp"
#include "hdvp/predict/predictor.hpp"
#include "hdvp/recon/networks.hpp"

namespace hdvp::eval {

inline constexpr int kScoreTasks = 3;
inline constexpr std::array<TaskName, kScoreTasks> kScoreTaskNames{TaskName::kDigitSum, TaskName::kPositionSum,
                                                                    TaskName::kPixelValueSum};

inline std::array<double, kScoreTasks> frame_targets(const dataset::Video& v, int t) {
  std::array<double, kScoreTasks> y{};
  for (int i = 0; i < kScoreTasks; ++i) y[static_cast<std::size_t>(i)] = frame_label(v, t, kScoreTaskNames[static_cast<std::size_t>(i)]);
  return y;
}

struct FrameProbeOptions {
  int channels = 16;
  int hidden = 64;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double train_fraction = 0.8;
};

/// Four stride-2 convolutions followed by two fully connected layers.
struct FrameProbe {
  recon::ConvEncoder<float> conv;
  nn::Linear<float> fc;
  std::array<double, kScoreTasks> mean{}, scale{};
  std::array<double, kScoreTasks> validation_mse{};

  FrameProbe() = default;
  FrameProbe(int height, int width, const FrameProbeOptions& o, Rng& rng)
      : conv(3, o.channels, height, width, o.hidden, rng), fc(o.hidden, kScoreTasks, rng) {
    scale.fill(1.0);
  }

  Var<float> raw(const Var<float>& x) const { return fc(ops::leaky_relu(conv(x))); }

  ParamSet<float> parameters() const {
    ParamSet<float> ps;
    conv.collect(ps, "conv");
    fc.collect(ps, "fc");
    return ps;
  }

  /// Task values for frames [B, H, W, 3].
  std::vector<std::array<double, kScoreTasks>> predict(const Tensor<float>& frames) const {
    NoGradGuard ng;
    Tensor<float> x({frames.dim(0), 3, frames.dim(1), frames.dim(2)});
    for (int b = 0; b < frames.dim(0); ++b) recon::put_frame_chw(x, b, frames, b);
    const auto out = raw(Var<float>::constant(std::move(x))).value();
    std::vector<std::array<double, kScoreTasks>> res(static_cast<std::size_t>(frames.dim(0)));
    for (int b = 0; b < frames.dim(0); ++b)
      for (int j = 0; j < kScoreTasks; ++j) res[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)] = out.at(b, j) * scale[static_cast<std::size_t>(j)] + mean[static_cast<std::size_t>(j)];
    return res;
  }
};

/// Train the frame probe on real frames with truth labels; the held-out MSE
/// per task is kept as the reference error.
inline FrameProbe train_frame_probe(const std::vector<dataset::Video>& videos, std::uint64_t seed, const FrameProbeOptions& o = {}) {
  require(videos.size() >= 2, ErrorKind::kData, "frame probe needs at least two videos");
  Rng rng(seed);
  const int h = videos[0].height(), w = videos[0].width();
  FrameProbe probe(h, w, o, rng);
  std::vector<int> order(videos.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(o.train_fraction * videos.size())), 1,
                                                      videos.size() - 1);
  std::vector<std::pair<int, int>> train, val;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int t = 0; t < videos[static_cast<std::size_t>(order[i])].length(); ++t) (i < n_train ? train : val).emplace_back(order[i], t);

  std::array<double, kScoreTasks> sum{}, sq{};
  for (auto [v, t] : train) {
    const auto y = frame_targets(videos[static_cast<std::size_t>(v)], t);
    for (int j = 0; j < kScoreTasks; ++j) {
      sum[j] += y[j];
      sq[j] += y[j] * y[j];
    }
  }
  for (int j = 0; j < kScoreTasks; ++j) {
    probe.mean[j] = sum[j] / static_cast<double>(train.size());
    probe.scale[j] = std::sqrt(std::max(sq[j] / static_cast<double>(train.size()) - probe.mean[j] * probe.mean[j], 0.0)) + 1e-6;
  }

  Adam<float> adam(probe.parameters(), static_cast<float>(o.learning_rate));
  for (int e = 0; e < o.epochs; ++e) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t s = 0; s < train.size(); s += static_cast<std::size_t>(o.batch_size)) {
      const int bsz = static_cast<int>(std::min(train.size() - s, static_cast<std::size_t>(o.batch_size)));
      Tensor<float> x({bsz, 3, h, w}), y({bsz, kScoreTasks});
      for (int b = 0; b < bsz; ++b) {
        const auto [v, t] = train[s + static_cast<std::size_t>(b)];
        recon::put_frame_chw(x, b, videos[static_cast<std::size_t>(v)].frames, t);
        const auto target = frame_targets(videos[static_cast<std::size_t>(v)], t);
        for (int j = 0; j < kScoreTasks; ++j) y.at(b, j) = static_cast<float>((target[j] - probe.mean[j]) / probe.scale[j]);
      }
      auto loss = ops::mean(ops::square(ops::sub(probe.raw(Var<float>::constant(std::move(x))), Var<float>::constant(std::move(y)))));
      adam.zero_grad();
      backward(loss);
      adam.step(5.0f);
    }
  }

  probe.validation_mse.fill(0);
  for (auto [v, t] : val) {
    const auto& video = videos[static_cast<std::size_t>(v)];
    Tensor<float> frame({1, h, w, 3});
    std::copy_n(video.frames.data() + static_cast<std::int64_t>(t) * h * w * 3, h * w * 3, frame.data());
    const auto p = probe.predict(frame)[0];
    const auto y = frame_targets(video, t);
    for (int j = 0; j < kScoreTasks; ++j) probe.validation_mse[j] += std::pow(p[j] - y[j], 2) / static_cast<double>(val.size());
  }
  return probe;
}

/// Per-task, per-future-timestep series.
struct ScoreSeries {
  std::vector<std::string> tasks;
  int t_fut = 0, videos = 0;
  std::vector<std::vector<double>> mse;            ///< [task][t]: probe(predicted frame) vs truth
  std::vector<std::vector<double>> reference_mse;  ///< [task][t]: probe(true frame) vs truth
  std::vector<std::vector<double>> predicted_mean, truth_mean;
  std::array<double, kScoreTasks> probe_validation_mse{};
};

inline nlohmann::json to_json(const ScoreSeries& s) {
  nlohmann::json tasks = nlohmann::json::object();
  for (std::size_t i = 0; i < s.tasks.size(); ++i)
    tasks[s.tasks[i]] = {{"mse", s.mse[i]},
                         {"reference_mse", s.reference_mse[i]},
                         {"predicted_mean", s.predicted_mean[i]},
                         {"truth_mean", s.truth_mean[i]},
                         {"probe_validation_mse", s.probe_validation_mse[i]}};
  return {{"t_fut", s.t_fut}, {"videos", s.videos}, {"tasks", tasks}};
}

/// Encode the first T_past frames, roll out T_fut latent frames and decode them.
/// Returns [T_fut, H, W, 3].
template <class Model>
Tensor<float> predict_frames(const recon::ReconNet<float>& net, const Model& model, const Tensor<float>& video) {
  const auto layout = latent::LatentLayout::from(net.config());
  const auto& pc = model.config();
  require(model.split().k() == layout.k() && model.split().pose_offset == layout.content_size(), ErrorKind::kIncompatible,
          "predictor latent size " + std::to_string(model.split().k()) + " does not match the reconstruction checkpoint (k = " +
              std::to_string(layout.k()) + ")");
  require(video.dim(0) >= pc.t_past + pc.t_fut, ErrorKind::kData,
          "video has " + std::to_string(video.dim(0)) + " frames but T_past + T_fut = " + std::to_string(pc.t_past + pc.t_fut));
  Tensor<float> past_frames({pc.t_past, video.dim(1), video.dim(2), 3});
  std::copy_n(video.data(), past_frames.numel(), past_frames.data());
  const auto past = latent::align_objects(latent::encode_frames(net, past_frames), layout).frames;
  return latent::decode_latents(net, predict::rollout(model, past, pc.t_fut));
}

/// Apply the frame probe to predicted and true future frames of every video.
template <class Model>
ScoreSeries predict_and_score(const std::vector<dataset::Video>& videos, const recon::ReconNet<float>& net, const Model& model,
                              const FrameProbe& probe) {
  const auto& pc = model.config();
  ScoreSeries s;
  s.t_fut = pc.t_fut;
  s.videos = static_cast<int>(videos.size());
  for (auto t : kScoreTaskNames) s.tasks.push_back(ProbeTask{t, false}.label());
  auto zeros = [&] { return std::vector<std::vector<double>>(kScoreTasks, std::vector<double>(static_cast<std::size_t>(pc.t_fut), 0.0)); };
  s.mse = zeros();
  s.reference_mse = zeros();
  s.predicted_mean = zeros();
  s.truth_mean = zeros();
  s.probe_validation_mse = probe.validation_mse;
  require(!videos.empty(), ErrorKind::kData, "no videos to score");
  const double n = static_cast<double>(videos.size());
  for (const auto& v : videos) {
    const auto pred = predict_frames(net, model, v.frames);
    Tensor<float> truth({pc.t_fut, v.height(), v.width(), 3});
    std::copy_n(v.frames.data() + static_cast<std::int64_t>(pc.t_past) * v.height() * v.width() * 3, truth.numel(), truth.data());
    const auto p_pred = probe.predict(pred);
    const auto p_true = probe.predict(truth);
    for (int t = 0; t < pc.t_fut; ++t) {
      const auto y = frame_targets(v, pc.t_past + t);
      for (int j = 0; j < kScoreTasks; ++j) {
        s.mse[j][t] += std::pow(p_pred[t][j] - y[j], 2) / n;
        s.reference_mse[j][t] += std::pow(p_true[t][j] - y[j], 2) / n;
        s.predicted_mean[j][t] += p_pred[t][j] / n;
        s.truth_mean[j][t] += y[j] / n;
      }
    }
  }
  return s;
}

}  // namespace hdvp::eval
