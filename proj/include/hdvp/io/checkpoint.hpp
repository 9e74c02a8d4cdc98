#pragma once

// Checkpoint file: one line of JSON header, a newline, then the raw
// little-endian float32 parameter blob. The header carries
//   {"format": "hdvp-checkpoint", "kind", "epoch", "config",
//    "parameters": [{"name", "shape", "offset"}]}
// with offsets counted in floats from the start of the blob.

#include <cstring>
#include <nlohmann/json.hpp>
#include <string>

#include "hdvp/core/nn.hpp"
#include "hdvp/io/file_access.hpp"

namespace hdvp::io {

inline constexpr const char* kCheckpointFormat = "hdvp-checkpoint";

struct Checkpoint {
  std::string kind;
  int epoch = 0;
  nlohmann::json config;
  nlohmann::ordered_json parameters;
  std::vector<float> blob;
};

template <class T>
void save_checkpoint(const fs::path& path, const std::string& kind, int epoch, const nlohmann::json& config,
                     const ParamSet<T>& params) {
  nlohmann::ordered_json header;
  header["format"] = kCheckpointFormat;
  header["kind"] = kind;
  header["epoch"] = epoch;
  header["config"] = config;
  auto plist = nlohmann::ordered_json::array();
  std::vector<float> blob;
  for (const auto& [name, p] : params.entries()) {
    plist.push_back({{"name", name}, {"shape", p.shape()}, {"offset", blob.size()}});
    for (std::int64_t i = 0; i < p.numel(); ++i) blob.push_back(static_cast<float>(p.value()[i]));
  }
  header["parameters"] = plist;
  std::string text = header.dump();
  text.push_back('\n');
  std::vector<char> buf(text.begin(), text.end());
  put_f32(buf, blob.data(), blob.size());
  write_file(path, buf.data(), buf.size());
}

inline Checkpoint read_checkpoint(const fs::path& path) {
  const auto buf = read_file(path);
  const auto nl = std::find(buf.begin(), buf.end(), '\n');
  require(nl != buf.end(), ErrorKind::kData, "checkpoint header missing: " + path.string());
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(buf.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "checkpoint header unreadable in " + path.string() + ": " + e.what());
  }
  require(header.value("format", "") == kCheckpointFormat, ErrorKind::kData, "not a checkpoint: " + path.string());
  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.epoch = header.at("epoch").get<int>();
  c.config = nlohmann::json::parse(header.at("config").dump());
  c.parameters = header.at("parameters");
  const auto start = static_cast<std::size_t>(nl - buf.begin()) + 1;
  const auto bytes = buf.size() - start;
  require(bytes % 4 == 0, ErrorKind::kData, "checkpoint blob size not a multiple of 4: " + path.string());
  c.blob.resize(bytes / 4);
  std::memcpy(c.blob.data(), buf.data() + start, bytes);
  return c;
}

/// Copy blob values into `params`; names and shapes must match exactly.
template <class T>
void load_parameters(const Checkpoint& c, const ParamSet<T>& params) {
  require(c.parameters.size() == params.entries().size(), ErrorKind::kIncompatible,
          "checkpoint holds " + std::to_string(c.parameters.size()) + " tensors, model expects " +
              std::to_string(params.entries().size()));
  std::size_t k = 0;
  for (const auto& [name, p] : params.entries()) {
    const auto& e = c.parameters[k++];
    require(e.at("name").get<std::string>() == name, ErrorKind::kIncompatible,
            "checkpoint tensor " + e.at("name").get<std::string>() + " where " + name + " expected");
    require(e.at("shape").get<Shape>() == p.shape(), ErrorKind::kIncompatible, "shape mismatch for " + name);
    const auto off = e.at("offset").get<std::size_t>();
    require(off + static_cast<std::size_t>(p.numel()) <= c.blob.size(), ErrorKind::kData, "blob too short for " + name);
    Var<T> v = p;
    auto& dst = v.mutable_value();
    for (std::int64_t i = 0; i < p.numel(); ++i) dst[i] = static_cast<T>(c.blob[off + static_cast<std::size_t>(i)]);
  }
}

}  // namespace hdvp::io
