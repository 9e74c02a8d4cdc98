#pragma once

// Report writers: JSON documents, CSV series, and small raster plots and
// image strips written as PPM.

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "hdvp/eval/scoring.hpp"
#include "hdvp/io/netpbm.hpp"

namespace hdvp::eval {

inline void write_json(const fs::path& p, const nlohmann::json& j) { io::write_text(p, j.dump(2) + "\n"); }

/// CSV with one row per future timestep: t, then <task>_mse and <task>_reference_mse.
inline void write_series_csv(const fs::path& p, const ScoreSeries& s) {
  std::ostringstream os;
  os.precision(9);
  os << "t";
  for (const auto& t : s.tasks) os << "," << t << "_mse," << t << "_reference_mse";
  os << "\n";
  for (int t = 0; t < s.t_fut; ++t) {
    os << t + 1;
    for (std::size_t j = 0; j < s.tasks.size(); ++j) os << "," << s.mse[j][t] << "," << s.reference_mse[j][t];
    os << "\n";
  }
  io::write_text(p, os.str());
}

/// Line plot of several series on shared axes, white background, one colour per series.
inline Tensor<float> plot_lines(const std::vector<std::vector<double>>& series, int height = 240, int width = 320) {
  static const std::array<std::array<float, 3>, 6> colors{{{0.85f, 0.1f, 0.1f},
                                                           {0.1f, 0.35f, 0.85f},
                                                           {0.1f, 0.6f, 0.2f},
                                                           {0.6f, 0.3f, 0.7f},
                                                           {0.9f, 0.55f, 0.0f},
                                                           {0.3f, 0.3f, 0.3f}}};
  Tensor<float> img({height, width, 3});
  img.fill(1.0f);
  const int m = 16;
  auto set = [&](int y, int x, const std::array<float, 3>& c) {
    if (y < 0 || y >= height || x < 0 || x >= width) return;
    for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[static_cast<std::size_t>(k)];
  };
  for (int x = m; x < width - m; ++x) set(height - m, x, {0, 0, 0});
  for (int y = m; y < height - m; ++y) set(y, m, {0, 0, 0});
  double lo = 1e300, hi = -1e300;
  std::size_t len = 0;
  for (const auto& s : series)
    for (double v : s)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        len = std::max(len, s.size());
      }
  if (len < 2 || !(hi >= lo)) return img;
  if (hi == lo) hi = lo + 1;
  auto px = [&](std::size_t i) { return m + static_cast<double>(i) / static_cast<double>(len - 1) * (width - 2 * m - 1); };
  auto py = [&](double v) { return height - m - (v - lo) / (hi - lo) * (height - 2 * m - 1); };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& c = colors[si % colors.size()];
    const auto& s = series[si];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (!std::isfinite(s[i]) || !std::isfinite(s[i + 1])) continue;
      const double x0 = px(i), y0 = py(s[i]), x1 = px(i + 1), y1 = py(s[i + 1]);
      const int n = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
      for (int k = 0; k <= n; ++k) {
        const double a = static_cast<double>(k) / n;
        const int x = static_cast<int>(std::lround(x0 + a * (x1 - x0))), y = static_cast<int>(std::lround(y0 + a * (y1 - y0)));
        set(y, x, c);
        set(y + 1, x, c);
      }
    }
  }
  return img;
}

/// Frames [N, H, W, 3] side by side with a one-pixel white gap.
inline Tensor<float> image_strip(const Tensor<float>& frames) {
  const int n = frames.dim(0), h = frames.dim(1), w = frames.dim(2);
  Tensor<float> out({h, n * (w + 1) - 1, 3});
  out.fill(1.0f);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(y, i * (w + 1) + x, c) = std::clamp(frames.at(i, y, x, c), 0.0f, 1.0f);
  return out;
}

}  // namespace hdvp::eval
