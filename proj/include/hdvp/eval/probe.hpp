#pragma once

// Disentanglement probes: a small fully connected network trained on one
// slice of the latent vector to predict a frame-level label.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "hdvp/dataset/dataset.hpp"
#include "hdvp/latent/codec.hpp"

namespace hdvp::eval {

enum class Selection { kAll, kContent, kPose };

inline const char* to_string(Selection s) {
  switch (s) {
    case Selection::kAll: return "all_z";
    case Selection::kContent: return "z_c_only";
    case Selection::kPose: return "z_p_only";
  }
  return "?";
}

enum class TaskName { kDigitSum, kBackgroundClass, kPixelValueSum, kPositionSum };

struct ProbeTask {
  TaskName name = TaskName::kDigitSum;
  bool classification = true;

  static ProbeTask parse(const std::string& s) {
    if (s == "digit_sum") return {TaskName::kDigitSum, true};
    if (s == "background_class") return {TaskName::kBackgroundClass, true};
    if (s == "pixel_value_sum") return {TaskName::kPixelValueSum, false};
    if (s == "position_sum") return {TaskName::kPositionSum, false};
    fail(ErrorKind::kInvalidArgument, "unknown probe task '" + s + "'");
  }
  std::string label() const {
    switch (name) {
      case TaskName::kDigitSum: return "digit_sum";
      case TaskName::kBackgroundClass: return "background_class";
      case TaskName::kPixelValueSum: return "pixel_value_sum";
      case TaskName::kPositionSum: return "position_sum";
    }
    return "?";
  }
};

/// Contiguous [begin, end) of a latent frame used by a selection.
inline std::pair<int, int> selection_range(const latent::LatentLayout& l, Selection s) {
  switch (s) {
    case Selection::kAll: return {0, l.k()};
    case Selection::kContent: return {0, l.content_size()};
    case Selection::kPose: return {l.content_size(), l.k()};
  }
  return {0, 0};
}

/// Sum over objects of the normalised centre coordinates cx/W + cy/H.
inline double position_sum(const std::vector<dataset::TruthRecord>& objs, int height, int width) {
  double s = 0;
  for (const auto& o : objs) s += o.center_x / width + o.center_y / height;
  return s;
}

inline int digit_sum(const std::vector<dataset::TruthRecord>& objs) {
  int s = 0;
  for (const auto& o : objs) s += o.digit;
  return s;
}

inline double pixel_value_sum(const Tensor<float>& video, int t) {
  const std::int64_t n = static_cast<std::int64_t>(video.dim(1)) * video.dim(2) * 3;
  const float* p = video.data() + t * n;
  double s = 0;
  for (std::int64_t i = 0; i < n; ++i) s += p[i];
  return s;
}

/// Label of frame t of a video for a task (class index or regression value).
inline double frame_label(const dataset::Video& v, int t, TaskName task) {
  const auto& objs = v.truth.at(static_cast<std::size_t>(t));
  switch (task) {
    case TaskName::kDigitSum: return digit_sum(objs);
    case TaskName::kBackgroundClass: return v.background_label;
    case TaskName::kPixelValueSum: return pixel_value_sum(v.frames, t);
    case TaskName::kPositionSum: return position_sum(objs, v.height(), v.width());
  }
  return 0;
}

/// Per-frame examples: features [n, k], one label per row, source video id per row.
struct ProbeData {
  Tensor<float> features;
  std::vector<double> labels;
  std::vector<int> videos;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Pair every latent frame with its truth label.
inline ProbeData collect_probe_data(const latent::LatentManifest& lat, const dataset::DatasetManifest& data, TaskName task) {
  std::vector<float> rows;
  ProbeData out;
  for (int i = 0; i < lat.count(); ++i) {
    const auto seq = latent::read_latent_sequence(lat.sequence_path(static_cast<std::size_t>(i)));
    const int vid = lat.videos.at(static_cast<std::size_t>(i));
    const auto video = dataset::read_video(data.video_path(static_cast<std::size_t>(vid)));
    require(video.length() == seq.frames.dim(0), ErrorKind::kData,
            "latent sequence " + std::to_string(i) + " does not match video " + std::to_string(vid));
    rows.insert(rows.end(), seq.frames.data(), seq.frames.data() + seq.frames.numel());
    for (int t = 0; t < video.length(); ++t) {
      out.labels.push_back(frame_label(video, t, task));
      out.videos.push_back(vid);
    }
  }
  out.features = Tensor<float>({out.size(), lat.layout.k()}, rows);
  return out;
}

struct ProbeOptions {
  int epochs = 60;
  int batch_size = 64;
  double learning_rate = 1e-3;
  int hidden1 = 256, hidden2 = 128;
  double train_fraction = 0.8;
};

/// Held-out score of one probe run. Accuracy for classification, MSE for regression.
struct ProbeScore {
  double metric = 0;
  double chance = 0;  ///< label-marginal baseline on the same split
  int train_size = 0, test_size = 0;
};

namespace detail {

/// Train/test row indices from an 80/20 split of the distinct video ids.
inline std::pair<std::vector<int>, std::vector<int>> split_by_video(const std::vector<int>& videos, double frac, Rng& rng) {
  const std::set<int> uniq(videos.begin(), videos.end());
  std::vector<int> ids(uniq.begin(), uniq.end());
  require(ids.size() >= 2, ErrorKind::kData, "probe needs examples from at least two videos");
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(frac * ids.size())), 1, ids.size() - 1);
  const std::set<int> train_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<int> tr, te;
  for (int i = 0; i < static_cast<int>(videos.size()); ++i) (train_ids.count(videos[i]) ? tr : te).push_back(i);
  return {tr, te};
}

}  // namespace detail

/// Train a three-layer probe on columns [begin, end) and score it on held-out videos.
inline ProbeScore train_probe(const ProbeData& data, std::pair<int, int> columns, const ProbeTask& task, std::uint64_t seed,
                              const ProbeOptions& opt = {}) {
  require(data.size() >= 100, ErrorKind::kData, "probe needs at least 100 labelled examples, got " + std::to_string(data.size()));
  const auto [c0, c1] = columns;
  require(0 <= c0 && c0 < c1 && c1 <= data.features.dim(1), ErrorKind::kInvalidArgument, "probe column range is empty");
  const int d = c1 - c0;
  Rng rng(seed);
  const auto [tr, te] = detail::split_by_video(data.videos, opt.train_fraction, rng);

  // classes are the distinct label values, indexed in sorted order
  std::map<long, int> classes;
  if (task.classification) {
    for (double y : data.labels) classes.emplace(std::lround(y), 0);
    require(classes.size() >= 2, ErrorKind::kData, "probe task " + task.label() + " has a single class: labels are degenerate");
    int idx = 0;
    for (auto& [_, c] : classes) c = idx++;
  } else {
    const auto [lo, hi] = std::minmax_element(data.labels.begin(), data.labels.end());
    require(*hi > *lo, ErrorKind::kData, "probe task " + task.label() + " has constant targets: labels are degenerate");
  }

  // standardisation from the training rows
  std::vector<double> mean(static_cast<std::size_t>(d), 0), sd(static_cast<std::size_t>(d), 0);
  for (int r : tr)
    for (int j = 0; j < d; ++j) mean[j] += data.features.at(r, c0 + j);
  for (auto& m : mean) m /= static_cast<double>(tr.size());
  for (int r : tr)
    for (int j = 0; j < d; ++j) sd[j] += std::pow(data.features.at(r, c0 + j) - mean[j], 2);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(tr.size())) + 1e-6;
  double ymean = 0, ysd = 1;
  if (!task.classification) {
    ymean = 0;
    for (int r : tr) ymean += data.labels[r];
    ymean /= static_cast<double>(tr.size());
    double v = 0;
    for (int r : tr) v += std::pow(data.labels[r] - ymean, 2);
    ysd = std::sqrt(v / static_cast<double>(tr.size())) + 1e-12;
  }
  auto batch_x = [&](const std::vector<int>& rows) {
    Tensor<float> x({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < d; ++j)
        x.at(static_cast<int>(i), j) = static_cast<float>((data.features.at(rows[i], c0 + j) - mean[j]) / sd[j]);
    return Var<float>::constant(std::move(x));
  };
  auto class_of = [&](int r) { return classes.at(std::lround(data.labels[r])); };

  const int n_out = task.classification ? static_cast<int>(classes.size()) : 1;
  nn::Mlp3<float> mlp(d, opt.hidden1, opt.hidden2, n_out, rng);
  ParamSet<float> ps;
  mlp.collect(ps, "probe");
  Adam<float> adam(ps, static_cast<float>(opt.learning_rate));
  std::vector<int> order = tr;
  for (int e = 0; e < opt.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(opt.batch_size)) {
      std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(s),
                            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + static_cast<std::size_t>(opt.batch_size))));
      auto out = mlp(batch_x(rows));
      Var<float> loss;
      if (task.classification) {
        std::vector<int> y;
        for (int r : rows) y.push_back(class_of(r));
        loss = ops::cross_entropy(out, y);
      } else {
        Tensor<float> y({static_cast<int>(rows.size()), 1});
        for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<std::int64_t>(i)] = static_cast<float>((data.labels[rows[i]] - ymean) / ysd);
        loss = ops::mean(ops::square(ops::sub(out, Var<float>::constant(std::move(y)))));
      }
      adam.zero_grad();
      backward(loss);
      adam.step();
    }
  }

  ProbeScore score;
  score.train_size = static_cast<int>(tr.size());
  score.test_size = static_cast<int>(te.size());
  NoGradGuard ng;
  const auto out = mlp(batch_x(te)).value();
  if (task.classification) {
    int correct = 0;
    for (std::size_t i = 0; i < te.size(); ++i) {
      int best = 0;
      for (int j = 1; j < n_out; ++j)
        if (out.at(static_cast<int>(i), j) > out.at(static_cast<int>(i), best)) best = j;
      correct += best == class_of(te[i]);
    }
    score.metric = static_cast<double>(correct) / static_cast<double>(te.size());
    // expected accuracy of guessing from the training label marginals
    std::vector<double> p_tr(classes.size(), 0), p_te(classes.size(), 0);
    for (int r : tr) p_tr[class_of(r)] += 1.0 / static_cast<double>(tr.size());
    for (int r : te) p_te[class_of(r)] += 1.0 / static_cast<double>(te.size());
    for (std::size_t c = 0; c < classes.size(); ++c) score.chance += p_tr[c] * p_te[c];
  } else {
    double se = 0, se0 = 0;
    for (std::size_t i = 0; i < te.size(); ++i) {
      const double y = data.labels[te[i]];
      se += std::pow(out[static_cast<std::int64_t>(i)] * ysd + ymean - y, 2);
      se0 += std::pow(ymean - y, 2);
    }
    score.metric = se / static_cast<double>(te.size());
    score.chance = se0 / static_cast<double>(te.size());
  }
  return score;
}

/// metric_subset / metric_all.
inline double disentanglement_ratio(double metric_all, double metric_subset) {
  require(metric_all > 0, ErrorKind::kInvalidArgument, "disentanglement ratio is undefined when the full-latent metric is 0");
  return metric_subset / metric_all;
}

struct SelectionStats {
  std::vector<double> trials;
  double mean = 0, stddev = 0;
};

struct ProbeResult {
  std::string task;
  std::map<Selection, SelectionStats> metrics;
  std::vector<double> r_c, r_p;  ///< per trial
  double r_c_mean = 0, r_p_mean = 0;
  double chance = 0;
  int trials = 0;

  /// Median over trials of r_c - r_p.
  double median_gap() const {
    std::vector<double> g;
    for (std::size_t i = 0; i < r_c.size(); ++i) g.push_back(r_c[i] - r_p[i]);
    std::sort(g.begin(), g.end());
    if (g.empty()) return 0;
    const std::size_t n = g.size();
    return n % 2 ? g[n / 2] : 0.5 * (g[n / 2 - 1] + g[n / 2]);
  }
};

inline void summarize(SelectionStats& s) {
  const double n = static_cast<double>(s.trials.size());
  s.mean = std::accumulate(s.trials.begin(), s.trials.end(), 0.0) / n;
  double v = 0;
  for (double x : s.trials) v += (x - s.mean) * (x - s.mean);
  s.stddev = s.trials.size() >= 2 ? std::sqrt(v / (n - 1)) : 0;
}

/// All three selections for `trials` seeds (seed, seed + 1, ...).
inline ProbeResult evaluate_disentanglement(const ProbeData& data, const latent::LatentLayout& layout, const ProbeTask& task,
                                            std::uint64_t seed, int trials = 5, const ProbeOptions& opt = {}) {
  require(trials >= 1, ErrorKind::kInvalidArgument, "probe trials must be >= 1");
  ProbeResult res;
  res.task = task.label();
  res.trials = trials;
  for (int t = 0; t < trials; ++t) {
    std::map<Selection, double> m;
    for (auto s : {Selection::kAll, Selection::kContent, Selection::kPose}) {
      const auto sc = train_probe(data, selection_range(layout, s), task, seed + static_cast<std::uint64_t>(t), opt);
      m[s] = sc.metric;
      res.metrics[s].trials.push_back(sc.metric);
      if (s == Selection::kAll) res.chance += sc.chance / trials;
    }
    res.r_c.push_back(disentanglement_ratio(m[Selection::kAll], m[Selection::kContent]));
    res.r_p.push_back(disentanglement_ratio(m[Selection::kAll], m[Selection::kPose]));
  }
  for (auto& [_, s] : res.metrics) summarize(s);
  res.r_c_mean = std::accumulate(res.r_c.begin(), res.r_c.end(), 0.0) / trials;
  res.r_p_mean = std::accumulate(res.r_p.begin(), res.r_p.end(), 0.0) / trials;
  return res;
}

inline nlohmann::json to_json(const ProbeResult& r) {
  nlohmann::json m;
  for (const auto& [s, st] : r.metrics) m[to_string(s)] = {{"mean", st.mean}, {"std", st.stddev}, {"trials", st.trials}};
  return {{"task", r.task}, {"metrics", m},        {"r_c", r.r_c_mean},        {"r_p", r.r_p_mean}, {"r_c_trials", r.r_c},
          {"r_p_trials", r.r_p}, {"median_gap", r.median_gap()}, {"chance", r.chance}, {"trials", r.trials}};
}

}  // namespace hdvp::eval
