#pragma once

// Netpbm (PGM/PPM, ASCII and binary, maxval <= 255) reading and PPM writing.
// Images are returned as float [H, W, C] in [0, 1].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "hdvp/core/tensor.hpp"
#include "hdvp/io/file_access.hpp"

namespace hdvp::io {

inline Tensor<float> read_netpbm(const fs::path& p) {
  const auto bytes = read_file(p);
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto next_int = [&] {
    skip_ws();
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    require(any, ErrorKind::kData, "malformed netpbm header in " + p.string());
    return v;
  };
  require(bytes.size() > 2 && bytes[0] == 'P', ErrorKind::kData, "not a netpbm file: " + p.string());
  const char kind = bytes[1];
  require(kind == '2' || kind == '3' || kind == '5' || kind == '6', ErrorKind::kData,
          "unsupported netpbm variant P" + std::string(1, kind) + " in " + p.string());
  pos = 2;
  const int w = next_int(), h = next_int(), maxval = next_int();
  require(w > 0 && h > 0 && maxval > 0 && maxval < 256, ErrorKind::kData,
          "unsupported netpbm geometry in " + p.string());
  const int c = (kind == '3' || kind == '6') ? 3 : 1;
  Tensor<float> img({h, w, c});
  const bool binary = kind == '5' || kind == '6';
  if (binary) {
    ++pos;  // single whitespace after maxval
    require(bytes.size() >= pos + static_cast<std::size_t>(img.numel()), ErrorKind::kData,
            "truncated netpbm data in " + p.string());
    for (std::int64_t i = 0; i < img.numel(); ++i)
      img[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / maxval;
  } else {
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(next_int()) / maxval;
  }
  return img;
}

/// Writes an [H, W, 3] or [H, W, 1] float image in [0, 1] as binary PPM/PGM.
inline void write_netpbm(const fs::path& p, const Tensor<float>& img) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  require(c == 1 || c == 3, ErrorKind::kShape, "write_netpbm needs 1 or 3 channels");
  std::string header = std::string(c == 3 ? "P6" : "P5") + "\n" + std::to_string(w) + " " +
                       std::to_string(h) + "\n255\n";
  std::vector<char> buf(header.begin(), header.end());
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    const float v = std::clamp(img[i], 0.0f, 1.0f);
    buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  write_file(p, buf.data(), buf.size());
}

}  // namespace hdvp::io
