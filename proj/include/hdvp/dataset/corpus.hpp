#pragma once

// Glyph and background corpora.
//
// A glyph corpus is a directory of grayscale netpbm images. The class label is
// taken from the name of the image's parent directory if it is numeric,
// otherwise from the leading digits of the file name (e.g. "7_0042.pgm").
// A background corpus is a directory of RGB netpbm images labelled the same way.
// A built-in 5x7 digit font provides glyphs when no corpus is given.

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "hdvp/core/tensor.hpp"
#include "hdvp/io/netpbm.hpp"

namespace hdvp::dataset {

/// Binary mask [S, S] in {0, 1} plus a class label.
struct Glyph {
  Tensor<float> mask;
  int label = 0;
};

/// RGB image [H, W, 3] plus a class label.
struct Background {
  Tensor<float> image;
  int label = 0;
};

struct Corpora {
  std::vector<Glyph> glyphs;
  std::vector<Background> backgrounds;
};

/// Bilinear resize of an [H, W, C] image (pixel-centre aligned).
inline Tensor<float> resize_bilinear(const Tensor<float>& img, int oh, int ow) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor<float> out({oh, ow, c});
  for (int y = 0; y < oh; ++y) {
    const float sy = std::clamp((y + 0.5f) * h / oh - 0.5f, 0.0f, float(h - 1));
    const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, h - 1);
    const float fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      const float sx = std::clamp((x + 0.5f) * w / ow - 0.5f, 0.0f, float(w - 1));
      const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, w - 1);
      const float fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int yy, int xx) { return img[(static_cast<std::int64_t>(yy) * w + xx) * c + ch]; };
        out[(static_cast<std::int64_t>(y) * ow + x) * c + ch] =
            (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
    }
  }
  return out;
}

/// Largest centred square crop, resized to (oh, ow).
inline Tensor<float> center_crop_resize(const Tensor<float>& img, int oh, int ow) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double target = static_cast<double>(ow) / oh;
  int ch = h, cw = static_cast<int>(std::lround(h * target));
  if (cw > w) {
    cw = w;
    ch = static_cast<int>(std::lround(w / target));
  }
  const int y0 = (h - ch) / 2, x0 = (w - cw) / 2;
  Tensor<float> crop({ch, cw, c});
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int k = 0; k < c; ++k)
        crop[(static_cast<std::int64_t>(y) * cw + x) * c + k] =
            img[(static_cast<std::int64_t>(y + y0) * w + x + x0) * c + k];
  return resize_bilinear(crop, oh, ow);
}

/// Resize a glyph image to size x size and binarise at 0.5.
inline Tensor<float> binarize_glyph(const Tensor<float>& gray, int size) {
  Tensor<float> g = gray;
  if (g.dim(2) == 3) {
    Tensor<float> m({g.dim(0), g.dim(1), 1});
    for (std::int64_t i = 0; i < m.numel(); ++i) m[i] = (g[3 * i] + g[3 * i + 1] + g[3 * i + 2]) / 3.0f;
    g = m;
  }
  auto r = resize_bilinear(g, size, size);
  Tensor<float> out({size, size});
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = r[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

/// The ten digits of a classic 5x7 font, padded to 7x7, one row string per line.
inline const std::array<std::array<const char*, 7>, 10>& digit_font() {
  static const std::array<std::array<const char*, 7>, 10> font = {{
      {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
      {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
      {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
      {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
      {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
      {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
      {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
      {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
      {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
      {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
  }};
  return font;
}

/// Built-in digit glyphs at `size` pixels: a regular and a bold variant per digit.
inline std::vector<Glyph> builtin_digit_glyphs(int size) {
  std::vector<Glyph> out;
  for (int bold = 0; bold < 2; ++bold) {
    for (int d = 0; d < 10; ++d) {
      Tensor<float> cells({7, 7, 1});
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 5; ++x)
          if (digit_font()[d][y][x] == '1') {
            cells[y * 7 + x + 1] = 1.0f;
            if (bold) cells[y * 7 + x + 2] = 1.0f;
          }
      // nearest-neighbour upscale keeps strokes crisp
      Tensor<float> big({size, size});
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) big[y * size + x] = cells[(y * 7 / size) * 7 + x * 7 / size];
      out.push_back({big, d});
    }
  }
  return out;
}

namespace detail {

inline int label_for(const fs::path& p) {
  auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); });
  };
  const std::string parent = p.parent_path().filename().string();
  if (numeric(parent)) return std::stoi(parent);
  const std::string stem = p.stem().string();
  std::size_t n = 0;
  while (n < stem.size() && std::isdigit(static_cast<unsigned char>(stem[n]))) ++n;
  return n ? std::stoi(stem.substr(0, std::min<std::size_t>(n, 6))) : 0;
}

inline std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

inline std::vector<Glyph> load_glyphs(const fs::path& dir, int size) {
  std::vector<Glyph> out;
  for (const auto& f : detail::image_files(dir)) out.push_back({binarize_glyph(io::read_netpbm(f), size), detail::label_for(f)});
  require(!out.empty(), ErrorKind::kCorpusMissing, "no glyph images found under " + dir.string());
  return out;
}

inline std::vector<Background> load_backgrounds(const fs::path& dir, int h, int w) {
  std::vector<Background> out;
  for (const auto& f : detail::image_files(dir)) {
    auto img = io::read_netpbm(f);
    if (img.dim(2) == 1) {
      Tensor<float> rgb({img.dim(0), img.dim(1), 3});
      for (std::int64_t i = 0; i < img.numel(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = img[i];
      img = rgb;
    }
    out.push_back({center_crop_resize(img, h, w), detail::label_for(f)});
  }
  require(!out.empty(), ErrorKind::kCorpusMissing, "no background images found under " + dir.string());
  return out;
}

}  // namespace hdvp::dataset
