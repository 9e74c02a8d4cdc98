#pragma once

// Stage-2 recurrent predictor over latent sequences. Each step sees the
// averaged content vector, the current pose part and its difference from the
// previous frame, and predicts the next pose difference.

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hdvp/core/nn.hpp"
#include "hdvp/io/checkpoint.hpp"
#include "hdvp/latent/codec.hpp"

namespace hdvp::predict {

inline constexpr const char* kPredictorCheckpointKind = "predictor";

struct PredictorConfig {
  int t_past = 8;
  int t_fut = 8;
  int hidden = 128;
  double huber_delta = 1.0;
  double learning_rate = 1e-3;
  int epochs = 50;
  int batch_size = 16;
  double grad_clip = 5.0;
  std::uint64_t seed = 7;

  void validate() const {
    auto bad = [](const std::string& f, const std::string& m) { fail(ErrorKind::kConfig, "predict." + f + ": " + m); };
    if (t_past < 2) bad("t_past", "must be >= 2");
    if (t_fut < 1) bad("t_fut", "must be >= 1");
    if (hidden < 1) bad("hidden", "must be >= 1");
    if (!(huber_delta > 0)) bad("huber_delta", "must be > 0");
    if (!(learning_rate > 0)) bad("learning_rate", "must be > 0");
    if (epochs < 1) bad("epochs", "must be >= 1");
    if (batch_size < 1) bad("batch_size", "must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = {{"t_past", c.t_past},         {"t_fut", c.t_fut},   {"hidden", c.hidden},
       {"huber_delta", c.huber_delta}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
       {"batch_size", c.batch_size}, {"grad_clip", c.grad_clip}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PredictorConfig& c) {
  c.t_past = j.value("t_past", c.t_past);
  c.t_fut = j.value("t_fut", c.t_fut);
  c.hidden = j.value("hidden", c.hidden);
  c.huber_delta = j.value("huber_delta", c.huber_delta);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
}

/// Index split of a flat latent frame into its time-invariant and pose parts.
struct PoseSplit {
  int content_offset = 0, content_size = 0, pose_offset = 0, pose_size = 0;

  static PoseSplit from(const latent::LatentLayout& l) { return {0, l.content_size(), l.content_size(), l.pose_size()}; }
  int k() const { return content_size + pose_size; }
};

/// Mean Huber loss over all elements.
template <class T>
Var<T> huber_loss(const Var<T>& pred, const Var<T>& target, T delta) {
  check_same_shape(pred.shape(), target.shape(), "huber_loss");
  require(delta > T(0), ErrorKind::kInvalidArgument, "huber delta must be > 0");
  const auto& a = pred.value();
  const auto& b = target.value();
  Tensor<T> r(a.shape());
  T total = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    r[i] = a[i] - b[i];
    const T ar = std::abs(r[i]);
    total += ar <= delta ? T(0.5) * r[i] * r[i] : delta * (ar - T(0.5) * delta);
  }
  const T n = static_cast<T>(a.numel());
  return make_result<T>(Tensor<T>({1}, total / n), {pred, target}, [r, delta, n](Node<T>& res) {
    auto* ga = grad_of(res, 0);
    auto* gb = grad_of(res, 1);
    for (std::int64_t i = 0; i < r.numel(); ++i) {
      const T d = std::clamp(r[i], -delta, delta) * res.grad[0] / n;
      if (ga) (*ga)[i] += d;
      if (gb) (*gb)[i] -= d;
    }
  });
}

/// Mean of the content part over the first t_past frames of a [T, k] sequence.
inline std::vector<float> average_content(const Tensor<float>& seq, int t_past, const PoseSplit& split) {
  require(seq.shape().size() == 2 && seq.dim(1) == split.k(), ErrorKind::kShape,
          "average_content: expected [T, " + std::to_string(split.k()) + "], got " + shape_str(seq.shape()));
  require(t_past >= 1 && seq.dim(0) >= t_past, ErrorKind::kShape,
          "average_content: sequence of length " + std::to_string(seq.dim(0)) + " is shorter than T_past = " +
              std::to_string(t_past));
  std::vector<double> acc(static_cast<std::size_t>(split.content_size), 0.0);
  for (int t = 0; t < t_past; ++t)
    for (int j = 0; j < split.content_size; ++j) acc[j] += seq.at(t, split.content_offset + j);
  std::vector<float> out(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j] / t_past);
  return out;
}

template <class T>
class Predictor {
 public:
  using value_type = T;

  Predictor(const PredictorConfig& cfg, const PoseSplit& split) : cfg_(cfg), split_(split) {
    cfg.validate();
    Rng rng(cfg.seed);
    cell_ = nn::LstmCell<T>(split.content_size + 2 * split.pose_size, cfg.hidden, rng);
    head_ = nn::Linear<T>(cfg.hidden, split.pose_size, rng);
    head_.weight.mutable_value().fill(T(0));
  }

  const PredictorConfig& config() const { return cfg_; }
  const PoseSplit& split() const { return split_; }

  ParamSet<T> parameters() const {
    ParamSet<T> ps;
    cell_.collect(ps, "lstm");
    head_.collect(ps, "head");
    return ps;
  }

  nn::LstmState<T> zero_state(int bsz) const { return cell_.zero_state(bsz); }

  /// One recurrent step on [B, *] inputs; returns (predicted next difference, new state).
  std::pair<Var<T>, nn::LstmState<T>> step(const nn::LstmState<T>& state, const Var<T>& content, const Var<T>& pose,
                                           const Var<T>& diff) const {
    require(content.shape().size() == 2 && content.dim(1) == split_.content_size, ErrorKind::kShape,
            "predict_step: content must be [B," + std::to_string(split_.content_size) + "], got " + shape_str(content.shape()));
    require(pose.shape() == Shape{content.dim(0), split_.pose_size} && diff.shape() == pose.shape(), ErrorKind::kShape,
            "predict_step: pose/diff must be [B," + std::to_string(split_.pose_size) + "]");
    auto next = cell_(ops::concat<T>({content, pose, diff}, 1), state);
    return {head_(next.h), next};
  }

 private:
  PredictorConfig cfg_;
  PoseSplit split_;
  nn::LstmCell<T> cell_;
  nn::Linear<T> head_;
};

namespace detail {

template <class T>
Var<T> row_const(const std::vector<float>& v) {
  Tensor<T> t({1, static_cast<int>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<T>(v[i]);
  return Var<T>::constant(std::move(t));
}

}  // namespace detail

/// Warm up on the past frames, then roll out t_fut frames autoregressively.
/// Output [t_fut, k]: pose = previous pose + predicted difference, content = averaged content.
/// Any model exposing split(), config().t_past, zero_state() and step() works.
template <class Model>
Tensor<float> rollout(const Model& model, const Tensor<float>& past, int t_fut) {
  using T = typename Model::value_type;
  const auto& sp = model.split();
  const int t_past = past.dim(0);
  require(t_fut >= 1, ErrorKind::kInvalidArgument, "rollout: t_fut must be >= 1");
  require(t_past == model.config().t_past, ErrorKind::kShape,
          "rollout: expected " + std::to_string(model.config().t_past) + " past frames, got " + std::to_string(t_past));
  const auto zc = average_content(past, t_past, sp);
  const auto content = detail::row_const<T>(zc);
  NoGradGuard ng;
  auto pose_of = [&](int t) {
    std::vector<float> p(past.data() + static_cast<std::int64_t>(t) * sp.k() + sp.pose_offset,
                         past.data() + static_cast<std::int64_t>(t) * sp.k() + sp.pose_offset + sp.pose_size);
    return p;
  };
  auto state = model.zero_state(1);
  std::vector<float> prev(static_cast<std::size_t>(sp.pose_size), 0.0f), cur = pose_of(0);
  std::vector<float> diff(prev.size(), 0.0f);
  Var<T> dhat;
  for (int t = 0; t < t_past; ++t) {
    cur = pose_of(t);
    if (t > 0)
      for (std::size_t j = 0; j < cur.size(); ++j) diff[j] = cur[j] - prev[j];
    std::tie(dhat, state) = model.step(state, content, detail::row_const<T>(cur), detail::row_const<T>(diff));
    prev = cur;
  }
  Tensor<float> out({t_fut, sp.k()});
  for (int s = 0; s < t_fut; ++s) {
    std::vector<float> next(cur.size());
    for (std::size_t j = 0; j < cur.size(); ++j) next[j] = cur[j] + static_cast<float>(dhat.value()[static_cast<std::int64_t>(j)]);
    float* row = out.data() + static_cast<std::int64_t>(s) * sp.k();
    std::copy(zc.begin(), zc.end(), row + sp.content_offset);
    std::copy(next.begin(), next.end(), row + sp.pose_offset);
    if (s + 1 == t_fut) break;
    for (std::size_t j = 0; j < cur.size(); ++j) diff[j] = next[j] - cur[j];
    cur = next;
    std::tie(dhat, state) = model.step(state, content, detail::row_const<T>(cur), detail::row_const<T>(diff));
  }
  return out;
}

/// Teacher-forced Huber loss of one batch of windows [B, t_past + t_fut, k].
template <class T>
Var<T> window_loss(const Predictor<T>& model, const std::vector<const float*>& windows) {
  const auto& sp = model.split();
  const auto& cfg = model.config();
  const int bsz = static_cast<int>(windows.size());
  const int len = cfg.t_past + cfg.t_fut;
  Tensor<T> content({bsz, sp.content_size});
  for (int b = 0; b < bsz; ++b)
    for (int j = 0; j < sp.content_size; ++j) {
      double s = 0;
      for (int t = 0; t < cfg.t_past; ++t) s += windows[b][t * sp.k() + sp.content_offset + j];
      content.at(b, j) = static_cast<T>(s / cfg.t_past);
    }
  auto cvar = Var<T>::constant(std::move(content));
  auto pose = [&](int t) {
    Tensor<T> p({bsz, sp.pose_size});
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < sp.pose_size; ++j) p.at(b, j) = static_cast<T>(windows[b][t * sp.k() + sp.pose_offset + j]);
    return p;
  };
  auto diff = [&](int t) {
    Tensor<T> d({bsz, sp.pose_size});
    if (t == 0) return d;
    const auto a = pose(t), c = pose(t - 1);
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = a[i] - c[i];
    return d;
  };
  auto state = model.zero_state(bsz);
  Var<T> total;
  for (int t = 0; t + 1 < len; ++t) {
    Var<T> dhat;
    std::tie(dhat, state) = model.step(state, cvar, Var<T>::constant(pose(t)), Var<T>::constant(diff(t)));
    if (t + 1 < cfg.t_past) continue;
    auto term = huber_loss(dhat, Var<T>::constant(diff(t + 1)), static_cast<T>(cfg.huber_delta));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, T(1) / static_cast<T>(cfg.t_fut));
}

struct Stage2Epoch {
  int epoch = 0;
  double huber = 0;
  double seconds = 0;
};

struct Stage2Options {
  fs::path log_path;
  std::function<void(const Stage2Epoch&)> on_epoch;
};

/// Sequences from a latent manifest, read from latent files only.
inline std::vector<Tensor<float>> load_sequences(const latent::LatentManifest& m) {
  std::vector<Tensor<float>> out;
  for (int i = 0; i < m.count(); ++i) out.push_back(latent::read_latent_sequence(m.sequence_path(static_cast<std::size_t>(i))).frames);
  return out;
}

inline Predictor<float> train_on_sequences(const std::vector<Tensor<float>>& seqs, const PoseSplit& split,
                                           const PredictorConfig& cfg, const Stage2Options& opts = {}) {
  cfg.validate();
  const int len = cfg.t_past + cfg.t_fut;
  std::string short_ids;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    require(seqs[i].shape().size() == 2 && seqs[i].dim(1) == split.k(), ErrorKind::kData,
            "sequence " + std::to_string(i) + " has the wrong frame size");
    if (seqs[i].dim(0) < len) short_ids += " " + std::to_string(i);
  }
  if (!short_ids.empty())
    fail(ErrorKind::kData, "sequences shorter than T_past + T_fut = " + std::to_string(len) + ":" + short_ids);
  require(!seqs.empty(), ErrorKind::kData, "no latent sequences to train on");

  Predictor<float> model(cfg, split);
  Adam<float> opt(model.parameters(), static_cast<float>(cfg.learning_rate));
  Rng rng(cfg.seed + 1);
  if (!opts.log_path.empty()) io::write_text(opts.log_path, "");
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double acc = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const float*> windows;
      for (std::size_t b = s; b < std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size)); ++b) {
        const auto& seq = seqs[static_cast<std::size_t>(order[b])];
        const int start = std::uniform_int_distribution<int>(0, seq.dim(0) - len)(rng);
        windows.push_back(seq.data() + static_cast<std::int64_t>(start) * split.k());
      }
      auto loss = window_loss(model, windows);
      const double v = loss.item();
      if (!std::isfinite(v)) fail(ErrorKind::kDivergence, "non-finite loss component 'huber'");
      opt.zero_grad();
      backward(loss);
      opt.step(static_cast<float>(cfg.grad_clip));
      acc += v * static_cast<double>(windows.size());
    }
    Stage2Epoch ep{e + 1, acc / static_cast<double>(seqs.size()),
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    if (!opts.log_path.empty())
      io::append_line(opts.log_path, nlohmann::json{{"epoch", ep.epoch}, {"huber", ep.huber}, {"seconds", ep.seconds}}.dump());
    if (opts.on_epoch) opts.on_epoch(ep);
  }
  return model;
}

inline nlohmann::json predictor_header_config(const PredictorConfig& cfg, const latent::LatentLayout& layout) {
  return {{"predictor", cfg}, {"dimensions", layout}};
}

/// Train from a latent dataset and write the checkpoint. Touches latent files only.
inline Predictor<float> train_stage2(const latent::LatentManifest& m, const PredictorConfig& cfg, const fs::path& out_path,
                                     const Stage2Options& opts = {}) {
  const auto seqs = load_sequences(m);
  auto model = train_on_sequences(seqs, PoseSplit::from(m.layout), cfg, opts);
  io::save_checkpoint(out_path, kPredictorCheckpointKind, cfg.epochs, predictor_header_config(cfg, m.layout),
                      model.parameters());
  return model;
}

struct LoadedPredictor {
  Predictor<float> model;
  latent::LatentLayout layout;
};

inline LoadedPredictor load_predictor(const fs::path& path) {
  const auto c = io::read_checkpoint(path);
  require(c.kind == kPredictorCheckpointKind, ErrorKind::kIncompatible, "checkpoint kind '" + c.kind + "' is not a predictor");
  const auto cfg = c.config.at("predictor").get<PredictorConfig>();
  const auto layout = c.config.at("dimensions").get<latent::LatentLayout>();
  LoadedPredictor out{Predictor<float>(cfg, PoseSplit::from(layout)), layout};
  io::load_parameters(c, out.model.parameters());
  return out;
}

}  // namespace hdvp::predict
