#pragma once

// Moving-glyphs-over-background video synthesis.

#include <cmath>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hdvp/core/nn.hpp"
#include "hdvp/dataset/corpus.hpp"

namespace hdvp::dataset {

enum class BackgroundMode { kCorpusImage, kFlatColor };

struct SynthesisSpec {
  int frame_height = 32;
  int frame_width = 32;
  int digit_size = 12;
  int n_min = 1;
  int n_max = 1;
  int video_length = 16;
  int velocity_min = 1;  ///< per-axis speed magnitude, pixels/frame
  int velocity_max = 2;
  double color_drift_rate = 0.03;
  BackgroundMode background_mode = BackgroundMode::kFlatColor;
  std::uint64_t rng_seed = 7;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::kInvalidArgument, "invalid synthesis spec: " + m); };
    if (frame_height <= 0 || frame_width <= 0) bad("frame size must be positive");
    if (digit_size <= 0 || digit_size >= std::min(frame_height, frame_width))
      bad("digit_size must satisfy 0 < digit_size < min(H, W)");
    if (n_min < 0 || n_max < n_min) bad("object count range must satisfy 0 <= n_min <= n_max");
    if (video_length < 2) bad("video_length must be >= 2");
    if (velocity_min < 0 || velocity_max < velocity_min) bad("velocity range must satisfy 0 <= min <= max");
    if (velocity_max >= std::min(frame_height, frame_width) - digit_size && velocity_max > 0)
      bad("velocity_max must be smaller than the free travel range");
    if (!(color_drift_rate >= 0.0 && color_drift_rate < 1.0)) bad("color_drift_rate must lie in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const SynthesisSpec& s) {
  j = nlohmann::json{{"frame_height", s.frame_height},
                     {"frame_width", s.frame_width},
                     {"digit_size", s.digit_size},
                     {"n_objects_range", {s.n_min, s.n_max}},
                     {"video_length", s.video_length},
                     {"velocity_range", {s.velocity_min, s.velocity_max}},
                     {"color_drift_rate", s.color_drift_rate},
                     {"background_mode", s.background_mode == BackgroundMode::kFlatColor ? "flat-color" : "corpus-image"},
                     {"rng_seed", s.rng_seed}};
}

inline void from_json(const nlohmann::json& j, SynthesisSpec& s) {
  s.frame_height = j.at("frame_height").get<int>();
  s.frame_width = j.at("frame_width").get<int>();
  s.digit_size = j.at("digit_size").get<int>();
  s.n_min = j.at("n_objects_range").at(0).get<int>();
  s.n_max = j.at("n_objects_range").at(1).get<int>();
  s.video_length = j.at("video_length").get<int>();
  s.velocity_min = j.at("velocity_range").at(0).get<int>();
  s.velocity_max = j.at("velocity_range").at(1).get<int>();
  s.color_drift_rate = j.at("color_drift_rate").get<double>();
  const auto mode = j.at("background_mode").get<std::string>();
  require(mode == "flat-color" || mode == "corpus-image", ErrorKind::kInvalidArgument,
          "background_mode must be flat-color or corpus-image");
  s.background_mode = mode == "flat-color" ? BackgroundMode::kFlatColor : BackgroundMode::kCorpusImage;
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

/// Ground truth for one object in one frame. Centre is in pixels; the glyph
/// occupies [cx - size/2, cx + size/2) horizontally, likewise vertically.
struct TruthRecord {
  double center_x = 0;
  double center_y = 0;
  int size = 0;
  double hue = 0;
  int digit = 0;
  int glyph_id = 0;

  friend bool operator==(const TruthRecord&, const TruthRecord&) = default;
};

struct Video {
  Tensor<float> frames;  ///< [T, H, W, 3], values in [0, 1]
  std::vector<std::vector<TruthRecord>> truth;
  int background_label = 0;
  int background_index = 0;

  int length() const { return frames.dim(0); }
  int height() const { return frames.dim(1); }
  int width() const { return frames.dim(2); }
};

/// HSV -> RGB with unit saturation and value.
inline std::array<float, 3> hue_to_rgb(double hue) {
  const double h = (hue - std::floor(hue)) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const float f = static_cast<float>(h - std::floor(h));
  switch (sector) {
    case 0: return {1.0f, f, 0.0f};
    case 1: return {1.0f - f, 1.0f, 0.0f};
    case 2: return {0.0f, 1.0f, f};
    case 3: return {0.0f, 1.0f - f, 1.0f};
    case 4: return {f, 0.0f, 1.0f};
    default: return {1.0f, 0.0f, 1.0f - f};
  }
}

/// Palette for flat-colour backgrounds; the index doubles as the background class.
inline std::array<float, 3> flat_background_color(int index) {
  static const float palette[10][3] = {
      {0.10f, 0.10f, 0.10f}, {0.45f, 0.45f, 0.45f}, {0.30f, 0.15f, 0.10f}, {0.10f, 0.25f, 0.15f},
      {0.12f, 0.15f, 0.35f}, {0.40f, 0.35f, 0.20f}, {0.25f, 0.10f, 0.30f}, {0.15f, 0.30f, 0.35f},
      {0.35f, 0.20f, 0.25f}, {0.20f, 0.20f, 0.05f}};
  const auto& p = palette[index % 10];
  return {p[0], p[1], p[2]};
}

inline Tensor<float> make_background(const SynthesisSpec& spec, const Corpora& corpora, int index) {
  const int h = spec.frame_height, w = spec.frame_width;
  if (spec.background_mode == BackgroundMode::kCorpusImage) return corpora.backgrounds.at(index).image;
  Tensor<float> bg({h, w, 3});
  const auto c = flat_background_color(index);
  for (std::int64_t i = 0; i < bg.numel(); ++i) bg[i] = c[i % 3];
  return bg;
}

/// Draws the objects of one frame over `background` ([H, W, 3]) in record order.
inline Tensor<float> render_frame(const Tensor<float>& background, const std::vector<TruthRecord>& objects,
                                  const std::vector<Glyph>& glyphs) {
  Tensor<float> frame = background;
  const int h = frame.dim(0), w = frame.dim(1);
  for (const auto& o : objects) {
    const auto& g = glyphs.at(o.glyph_id).mask;
    const int s = o.size;
    const int x0 = static_cast<int>(std::lround(o.center_x - s / 2.0));
    const int y0 = static_cast<int>(std::lround(o.center_y - s / 2.0));
    const auto rgb = hue_to_rgb(o.hue);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const int fy = y0 + y, fx = x0 + x;
        if (fy < 0 || fy >= h || fx < 0 || fx >= w || g[y * s + x] < 0.5f) continue;
        for (int c = 0; c < 3; ++c) frame[(static_cast<std::int64_t>(fy) * w + fx) * 3 + c] = rgb[c];
      }
  }
  return frame;
}

namespace detail {

struct Body {
  int x, y, vx, vy;
  double hue0;
  int glyph;
};

inline void advance_axis(int& p, int& v, int limit) {
  p += v;
  if (p < 0) {
    p = -p;
    v = -v;
  } else if (p > limit) {
    p = 2 * limit - p;
    v = -v;
  }
}

inline bool overlaps(int ax, int ay, int bx, int by, int s) { return std::abs(ax - bx) < s && std::abs(ay - by) < s; }

}  // namespace detail

/// Renders a full video. Walls reflect elastically; two glyphs whose boxes
/// come to overlap exchange their velocity component along the dominant axis
/// of their centre-to-centre vector (equal-mass elastic collision).
inline Video synthesize_video(const SynthesisSpec& spec, const Corpora& corpora, std::uint64_t seed) {
  spec.validate();
  require(!corpora.glyphs.empty(), ErrorKind::kCorpusMissing, "glyph corpus is empty");
  if (spec.background_mode == BackgroundMode::kCorpusImage)
    require(!corpora.backgrounds.empty(), ErrorKind::kCorpusMissing, "background corpus is empty");
  Rng rng(seed);
  const int s = spec.digit_size;
  const int lim_x = spec.frame_width - s, lim_y = spec.frame_height - s;
  const int n = std::uniform_int_distribution<int>(spec.n_min, spec.n_max)(rng);

  Video video;
  const int n_bg = spec.background_mode == BackgroundMode::kCorpusImage ? static_cast<int>(corpora.backgrounds.size()) : 10;
  video.background_index = std::uniform_int_distribution<int>(0, n_bg - 1)(rng);
  video.background_label = spec.background_mode == BackgroundMode::kCorpusImage
                               ? corpora.backgrounds[video.background_index].label
                               : video.background_index;
  const auto background = make_background(spec, corpora, video.background_index);

  std::vector<detail::Body> bodies;
  std::uniform_int_distribution<int> speed(spec.velocity_min, spec.velocity_max);
  std::bernoulli_distribution sign(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    detail::Body b{};
    b.glyph = std::uniform_int_distribution<int>(0, static_cast<int>(corpora.glyphs.size()) - 1)(rng);
    b.hue0 = unit(rng);
    b.vx = speed(rng) * (sign(rng) ? 1 : -1);
    b.vy = speed(rng) * (sign(rng) ? 1 : -1);
    for (int attempt = 0; attempt < 100; ++attempt) {
      b.x = std::uniform_int_distribution<int>(0, lim_x)(rng);
      b.y = std::uniform_int_distribution<int>(0, lim_y)(rng);
      bool clear = true;
      for (const auto& o : bodies) clear = clear && !detail::overlaps(b.x, b.y, o.x, o.y, s);
      if (clear) break;
    }
    bodies.push_back(b);
  }

  const int t_len = spec.video_length;
  video.frames = Tensor<float>({t_len, spec.frame_height, spec.frame_width, 3});
  const std::int64_t frame_elems = static_cast<std::int64_t>(spec.frame_height) * spec.frame_width * 3;
  for (int t = 0; t < t_len; ++t) {
    if (t > 0) {
      std::vector<detail::Body> next = bodies;
      for (auto& b : next) {
        detail::advance_axis(b.x, b.vx, lim_x);
        detail::advance_axis(b.y, b.vy, lim_y);
      }
      for (std::size_t i = 0; i < next.size(); ++i)
        for (std::size_t j = i + 1; j < next.size(); ++j) {
          if (!detail::overlaps(next[i].x, next[i].y, next[j].x, next[j].y, s)) continue;
          const int dx = bodies[j].x - bodies[i].x, dy = bodies[j].y - bodies[i].y;
          const bool along_x = std::abs(dx) >= std::abs(dy);
          const int closing = along_x ? (bodies[j].vx - bodies[i].vx) * dx : (bodies[j].vy - bodies[i].vy) * dy;
          if (closing >= 0) continue;
          auto a = bodies[i], b = bodies[j];
          if (along_x) std::swap(a.vx, b.vx);
          else std::swap(a.vy, b.vy);
          detail::advance_axis(a.x, a.vx, lim_x);
          detail::advance_axis(a.y, a.vy, lim_y);
          detail::advance_axis(b.x, b.vx, lim_x);
          detail::advance_axis(b.y, b.vy, lim_y);
          next[i] = a;
          next[j] = b;
        }
      bodies = next;
    }
    std::vector<TruthRecord> recs;
    for (const auto& b : bodies) {
      double hue = b.hue0 + spec.color_drift_rate * t;
      hue -= std::floor(hue);
      recs.push_back({b.x + s / 2.0, b.y + s / 2.0, s, hue, corpora.glyphs[b.glyph].label, b.glyph});
    }
    const auto frame = render_frame(background, recs, corpora.glyphs);
    std::copy_n(frame.data(), frame_elems, video.frames.data() + t * frame_elems);
    video.truth.push_back(std::move(recs));
  }
  return video;
}

/// Frame t of a video as a [1, 3, H, W] tensor.
template <class T = float>
Tensor<T> frame_chw(const Video& v, int t) {
  const int h = v.height(), w = v.width();
  Tensor<T> out({1, 3, h, w});
  const float* src = v.frames.data() + static_cast<std::int64_t>(t) * h * w * 3;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, c, y, x) = static_cast<T>(src[(y * w + x) * 3 + c]);
  return out;
}

/// Two distinct frame indices drawn uniformly without replacement.
inline std::pair<int, int> sample_frame_pair(int length, Rng& rng) {
  require(length >= 2, ErrorKind::kData, "insufficient frames: need at least 2, have " + std::to_string(length));
  const int i = std::uniform_int_distribution<int>(0, length - 1)(rng);
  int j = std::uniform_int_distribution<int>(0, length - 2)(rng);
  if (j >= i) ++j;
  return {i, j};
}

}  // namespace hdvp::dataset
