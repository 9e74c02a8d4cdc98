#pragma once

// Video files, truth sidecars and the dataset manifest.
//
// Video file: "HVID", u32 T, u32 H, u32 W, then T*H*W*3 little-endian float32
// in frame-major HWC order. Truth sidecar: same path with ".json" appended.
// Manifest: {"version", "video_count", "spec", "videos": [relative paths]}.

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "hdvp/dataset/synth.hpp"
#include "hdvp/io/file_access.hpp"

namespace hdvp::dataset {

inline constexpr const char* kDatasetVersion = "hdvp-dataset/1";

inline nlohmann::json truth_to_json(const Video& v) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& recs : v.truth) {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& r : recs)
      f.push_back({{"cx", r.center_x}, {"cy", r.center_y}, {"size", r.size}, {"hue", r.hue},
                   {"digit", r.digit}, {"glyph", r.glyph_id}});
    frames.push_back(f);
  }
  return {{"background_label", v.background_label}, {"background_index", v.background_index}, {"frames", frames}};
}

inline void truth_from_json(const nlohmann::json& j, Video& v) {
  v.background_label = j.at("background_label").get<int>();
  v.background_index = j.at("background_index").get<int>();
  v.truth.clear();
  for (const auto& f : j.at("frames")) {
    std::vector<TruthRecord> recs;
    for (const auto& r : f)
      recs.push_back({r.at("cx").get<double>(), r.at("cy").get<double>(), r.at("size").get<int>(),
                      r.at("hue").get<double>(), r.at("digit").get<int>(), r.at("glyph").get<int>()});
    v.truth.push_back(std::move(recs));
  }
}

inline fs::path truth_path(const fs::path& video_path) { return fs::path(video_path.string() + ".json"); }

inline void write_video(const fs::path& p, const Video& v) {
  std::vector<char> buf;
  buf.reserve(16 + v.frames.numel() * 4);
  buf.insert(buf.end(), {'H', 'V', 'I', 'D'});
  io::put_u32(buf, static_cast<std::uint32_t>(v.length()));
  io::put_u32(buf, static_cast<std::uint32_t>(v.height()));
  io::put_u32(buf, static_cast<std::uint32_t>(v.width()));
  io::put_f32(buf, v.frames.data(), static_cast<std::size_t>(v.frames.numel()));
  io::write_file(p, buf.data(), buf.size());
  io::write_text(truth_path(p), truth_to_json(v).dump(1));
}

inline Video read_video(const fs::path& p) {
  const auto buf = io::read_file(p);
  require(buf.size() >= 16 && std::string(buf.data(), 4) == "HVID", ErrorKind::kData, "not a video file: " + p.string());
  const auto t = io::get_u32(buf, 4), h = io::get_u32(buf, 8), w = io::get_u32(buf, 12);
  Video v;
  v.frames = Tensor<float>({static_cast<int>(t), static_cast<int>(h), static_cast<int>(w), 3});
  require(buf.size() == 16 + static_cast<std::size_t>(v.frames.numel()) * 4, ErrorKind::kData,
          "video payload size mismatch in " + p.string());
  std::memcpy(v.frames.data(), buf.data() + 16, static_cast<std::size_t>(v.frames.numel()) * 4);
  truth_from_json(nlohmann::json::parse(io::read_text(truth_path(p))), v);
  require(static_cast<int>(v.truth.size()) == v.length(), ErrorKind::kData, "truth length mismatch in " + p.string());
  return v;
}

struct DatasetManifest {
  std::string version = kDatasetVersion;
  int video_count = 0;
  SynthesisSpec spec;
  fs::path root;                 ///< directory holding the manifest
  std::vector<std::string> videos;  ///< paths relative to root

  fs::path video_path(std::size_t i) const { return root / videos.at(i); }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"version", m.version}, {"video_count", m.video_count}, {"spec", m.spec}, {"videos", m.videos}};
}

inline DatasetManifest read_manifest(const fs::path& manifest_file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(manifest_file));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "cannot parse manifest " + manifest_file.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.version = j.at("version").get<std::string>();
  require(m.version == kDatasetVersion, ErrorKind::kData, "unsupported dataset version " + m.version);
  m.video_count = j.at("video_count").get<int>();
  m.spec = j.at("spec").get<SynthesisSpec>();
  m.videos = j.at("videos").get<std::vector<std::string>>();
  m.root = manifest_file.parent_path();
  require(m.video_count >= 1 && static_cast<int>(m.videos.size()) == m.video_count, ErrorKind::kData,
          "manifest video list does not match video_count");
  return m;
}

/// Per-video seed derived from the dataset seed (splitmix64 finaliser).
inline std::uint64_t video_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Writes `count` videos plus manifest.json under out_dir.
inline DatasetManifest build_dataset(const SynthesisSpec& spec, const Corpora& corpora, int count, const fs::path& out_dir) {
  require(count >= 1, ErrorKind::kInvalidArgument, "dataset count must be >= 1, got " + std::to_string(count));
  spec.validate();
  DatasetManifest m;
  m.spec = spec;
  m.video_count = count;
  m.root = out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + out_dir.string() + ": " + ec.message());
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "video_%05d.hvid", i);
    const auto video = synthesize_video(spec, corpora, video_seed(spec.rng_seed, static_cast<std::uint64_t>(i)));
    write_video(out_dir / name, video);
    m.videos.emplace_back(name);
  }
  io::write_text(out_dir / "manifest.json", manifest_to_json(m).dump(2));
  return m;
}

}  // namespace hdvp::dataset
