#pragma once

// Latent-sequence dataset: per-frame flattening of the stage-1 codes, slot
// alignment across frames, and one-pass conversion of a video dataset.
//
// Frame layout (length k):
//   [ z_back | z_c^1 .. z_c^N | z_where^1 z_p^1 .. z_where^N z_p^N ]
// so the time-invariant part occupies [0, content_size) and the pose part
// [content_size, k).
//
// Latent file: "HLAT", u32 T, u32 k, u32 reserved (0), then T*k float32.
// Sidecar "<file>.json": {"video", "permutations"}.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "hdvp/dataset/dataset.hpp"
#include "hdvp/recon/train.hpp"

namespace hdvp::latent {

inline constexpr const char* kLatentVersion = "hdvp-latents/1";
inline constexpr int kWhereDim = 4;
inline constexpr int kMaxAlignObjects = 6;

struct LatentLayout {
  int k_back = 0, n_objects = 0, k_pose = 0, k_content = 0;

  static LatentLayout from(const recon::ReconConfig& c) { return {c.k_back, c.max_objects, c.k_pose, c.k_content}; }

  int object_pose_size() const { return kWhereDim + k_pose; }
  int content_size() const { return k_back + n_objects * k_content; }
  int pose_size() const { return n_objects * object_pose_size(); }
  int k() const { return content_size() + pose_size(); }
  int back_offset() const { return 0; }
  int content_offset(int i) const { return k_back + i * k_content; }
  int where_offset(int i) const { return content_size() + i * object_pose_size(); }
  int pose_offset(int i) const { return where_offset(i) + kWhereDim; }
};

inline void to_json(nlohmann::json& j, const LatentLayout& l) {
  j = {{"k", l.k()},
       {"k_back", l.k_back},
       {"n_objects", l.n_objects},
       {"k_where", kWhereDim},
       {"k_pose", l.k_pose},
       {"k_content", l.k_content},
       {"content_offset", 0},
       {"content_size", l.content_size()},
       {"pose_offset", l.content_size()},
       {"pose_size", l.pose_size()}};
}

inline void from_json(const nlohmann::json& j, LatentLayout& l) {
  l.k_back = j.at("k_back").get<int>();
  l.n_objects = j.at("n_objects").get<int>();
  l.k_pose = j.at("k_pose").get<int>();
  l.k_content = j.at("k_content").get<int>();
  require(j.value("k", l.k()) == l.k(), ErrorKind::kData, "latent layout table is inconsistent");
}

/// Per-frame pixel-to-latent size ratio.
inline double compression_ratio(int height, int width, int k) {
  require(k > 0, ErrorKind::kInvalidArgument, "k must be positive");
  return static_cast<double>(height) * width * 3 / k;
}

/// Flatten a batch of frame codes into rows of a [B, k] tensor.
template <class T>
Tensor<float> flatten_codes(const recon::FrameCodeVars<T>& fc, const LatentLayout& l) {
  const int bsz = fc.z_back.dim(0);
  Tensor<float> out({bsz, l.k()});
  auto put = [&](const Var<T>& v, int offset) {
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < v.dim(1); ++j) out.at(b, offset + j) = static_cast<float>(v.value().at(b, j));
  };
  put(fc.z_back, l.back_offset());
  for (int i = 0; i < l.n_objects; ++i) {
    put(fc.slots[i].z_content, l.content_offset(i));
    put(fc.slots[i].where, l.where_offset(i));
    put(fc.slots[i].z_pose, l.pose_offset(i));
  }
  return out;
}

/// Encode every frame of a [T,H,W,3] video (posterior means) to [T, k].
template <class T>
Tensor<float> encode_frames(const recon::ReconNet<T>& net, const Tensor<float>& video, int batch = 32) {
  const auto& cfg = net.config();
  require(video.shape().size() == 4 && video.dim(1) == cfg.height && video.dim(2) == cfg.width && video.dim(3) == 3,
          ErrorKind::kIncompatible,
          "frames " + shape_str(video.shape()) + " do not match the checkpoint frame size " + std::to_string(cfg.height) +
              "x" + std::to_string(cfg.width));
  const auto layout = LatentLayout::from(cfg);
  const int len = video.dim(0);
  Tensor<float> out({len, layout.k()});
  NoGradGuard ng;
  for (int s = 0; s < len; s += batch) {
    const int bsz = std::min(batch, len - s);
    Tensor<T> x({bsz, 3, cfg.height, cfg.width});
    for (int b = 0; b < bsz; ++b) recon::put_frame_chw(x, b, video, s + b);
    const auto rows = flatten_codes(net.encode_frame(Var<T>::constant(x)), layout);
    std::copy_n(rows.data(), rows.numel(), out.data() + static_cast<std::int64_t>(s) * layout.k());
  }
  return out;
}

/// Single frame [H,W,3] to a length-k vector.
template <class T>
std::vector<float> encode_frame(const recon::ReconNet<T>& net, const Tensor<float>& frame) {
  const auto rows = encode_frames(net, frame.reshaped({1, frame.dim(0), frame.dim(1), frame.dim(2)}));
  return {rows.data(), rows.data() + rows.numel()};
}

/// Flat rows [B, k] split back into the decoder's code tensors.
template <class T>
struct FlatCodes {
  Var<T> z_back;
  std::vector<Var<T>> wheres, z_poses, z_contents;
};

template <class T>
FlatCodes<T> unflatten_codes(const Tensor<float>& rows, const LatentLayout& l) {
  require(rows.shape().size() == 2 && rows.dim(1) == l.k(), ErrorKind::kShape,
          "latent rows must be [B, " + std::to_string(l.k()) + "], got " + shape_str(rows.shape()));
  const int bsz = rows.dim(0);
  auto take = [&](int offset, int len) {
    Tensor<T> t({bsz, len});
    for (int b = 0; b < bsz; ++b)
      for (int j = 0; j < len; ++j) t.at(b, j) = static_cast<T>(rows.at(b, offset + j));
    return Var<T>::constant(std::move(t));
  };
  FlatCodes<T> c;
  c.z_back = take(l.back_offset(), l.k_back);
  for (int i = 0; i < l.n_objects; ++i) {
    c.wheres.push_back(take(l.where_offset(i), kWhereDim));
    c.z_poses.push_back(take(l.pose_offset(i), l.k_pose));
    c.z_contents.push_back(take(l.content_offset(i), l.k_content));
  }
  return c;
}

/// [B,3,H,W] network output to [B,H,W,3] frames.
template <class T>
Tensor<float> to_hwc(const Tensor<T>& x) {
  const int bsz = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor<float> out({bsz, h, w, 3});
  for (int b = 0; b < bsz; ++b)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(b, y, xx, c) = static_cast<float>(x.at(b, c, y, xx));
  return out;
}

/// Decode latent rows [B, k] to frames [B, H, W, 3].
template <class T>
Tensor<float> decode_latents(const recon::ReconNet<T>& net, const Tensor<float>& rows) {
  const auto l = LatentLayout::from(net.config());
  NoGradGuard ng;
  const auto c = unflatten_codes<T>(rows, l);
  return to_hwc(net.decode_frame(c.z_back, c.wheres, c.z_poses, c.z_contents).value());
}

struct AlignedSequence {
  Tensor<float> frames;                   ///< [T, k], slots permuted
  std::vector<std::vector<int>> permutations;  ///< per frame: aligned slot i <- raw slot perm[i]
};

/// sum_i ||content_i(prev) - content_perm[i](next)||^2
inline double permutation_cost(const float* prev, const float* next, const std::vector<int>& perm, const LatentLayout& l) {
  double cost = 0;
  for (int i = 0; i < l.n_objects; ++i) {
    const float* a = prev + l.content_offset(i);
    const float* b = next + l.content_offset(perm[static_cast<std::size_t>(i)]);
    for (int j = 0; j < l.k_content; ++j) cost += (double(a[j]) - b[j]) * (double(a[j]) - b[j]);
  }
  return cost;
}

/// Permutation of `next`'s slots minimising the content distance to the
/// already aligned `prev`; ties go to the lexicographically smallest.
inline std::vector<int> best_permutation(const float* prev, const float* next, const LatentLayout& l) {
  std::vector<int> perm(static_cast<std::size_t>(l.n_objects));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = permutation_cost(prev, next, perm, l);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double c = permutation_cost(prev, next, perm, l);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  }
  return best;
}

/// Apply a slot permutation to one frame: out slot i <- in slot perm[i].
inline void permute_slots(const float* in, float* out, const std::vector<int>& perm, const LatentLayout& l) {
  std::copy_n(in, l.k_back, out);
  for (int i = 0; i < l.n_objects; ++i) {
    const int p = perm[static_cast<std::size_t>(i)];
    std::copy_n(in + l.content_offset(p), l.k_content, out + l.content_offset(i));
    std::copy_n(in + l.where_offset(p), l.object_pose_size(), out + l.where_offset(i));
  }
}

/// Greedy chaining: frame 0 keeps its order; frame t+1 is matched against aligned frame t.
inline AlignedSequence align_objects(const Tensor<float>& frames, const LatentLayout& l) {
  require(l.n_objects <= kMaxAlignObjects, ErrorKind::kUnsupported,
          "slot alignment enumerates N! permutations and supports N <= 6, got N = " + std::to_string(l.n_objects));
  require(frames.shape().size() == 2 && frames.dim(0) >= 1 && frames.dim(1) == l.k(), ErrorKind::kShape,
          "align_objects: expected [T>=1, " + std::to_string(l.k()) + "], got " + shape_str(frames.shape()));
  const int len = frames.dim(0), k = l.k();
  AlignedSequence out{Tensor<float>(frames.shape()), {}};
  std::vector<int> ident(static_cast<std::size_t>(l.n_objects));
  std::iota(ident.begin(), ident.end(), 0);
  std::copy_n(frames.data(), k, out.frames.data());
  out.permutations.push_back(ident);
  for (int t = 1; t < len; ++t) {
    const float* prev = out.frames.data() + static_cast<std::int64_t>(t - 1) * k;
    const float* raw = frames.data() + static_cast<std::int64_t>(t) * k;
    auto perm = best_permutation(prev, raw, l);
    permute_slots(raw, out.frames.data() + static_cast<std::int64_t>(t) * k, perm, l);
    out.permutations.push_back(std::move(perm));
  }
  return out;
}

struct LatentSequence {
  Tensor<float> frames;  ///< [T, k]
  int video = 0;
  std::vector<std::vector<int>> permutations;
};

inline void write_latent_sequence(const fs::path& p, const LatentSequence& s) {
  std::vector<char> buf{'H', 'L', 'A', 'T'};
  io::put_u32(buf, static_cast<std::uint32_t>(s.frames.dim(0)));
  io::put_u32(buf, static_cast<std::uint32_t>(s.frames.dim(1)));
  io::put_u32(buf, 0);
  io::put_f32(buf, s.frames.data(), static_cast<std::size_t>(s.frames.numel()));
  io::write_file(p, buf.data(), buf.size());
  io::write_text(fs::path(p.string() + ".json"), nlohmann::json{{"video", s.video}, {"permutations", s.permutations}}.dump());
}

inline LatentSequence read_latent_sequence(const fs::path& p) {
  const auto buf = io::read_file(p);
  require(buf.size() >= 16 && std::string(buf.data(), 4) == "HLAT", ErrorKind::kData, "not a latent file: " + p.string());
  const auto t = io::get_u32(buf, 4), k = io::get_u32(buf, 8);
  LatentSequence s;
  s.frames = Tensor<float>({static_cast<int>(t), static_cast<int>(k)});
  require(buf.size() == 16 + static_cast<std::size_t>(s.frames.numel()) * 4, ErrorKind::kData,
          "latent payload size mismatch in " + p.string());
  std::memcpy(s.frames.data(), buf.data() + 16, static_cast<std::size_t>(s.frames.numel()) * 4);
  const fs::path side(p.string() + ".json");
  if (fs::exists(side)) {
    const auto j = nlohmann::json::parse(io::read_text(side));
    s.video = j.at("video").get<int>();
    s.permutations = j.at("permutations").get<std::vector<std::vector<int>>>();
  }
  return s;
}

struct LatentManifest {
  std::string version = kLatentVersion;
  LatentLayout layout;
  int frame_height = 0, frame_width = 0, sequence_length = 0;
  fs::path root;
  std::vector<std::string> sequences;  ///< relative to root
  std::vector<int> videos;             ///< source video id per sequence

  int count() const { return static_cast<int>(sequences.size()); }
  fs::path sequence_path(std::size_t i) const { return root / sequences.at(i); }
};

inline nlohmann::json latent_manifest_to_json(const LatentManifest& m) {
  return {{"version", m.version},
          {"dimensions", m.layout},
          {"frame_height", m.frame_height},
          {"frame_width", m.frame_width},
          {"sequence_length", m.sequence_length},
          {"compression_ratio", compression_ratio(m.frame_height, m.frame_width, m.layout.k())},
          {"sequence_count", m.count()},
          {"sequences", m.sequences},
          {"videos", m.videos}};
}

inline LatentManifest read_latent_manifest(const fs::path& file) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(file));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, "cannot parse latent manifest " + file.string() + ": " + e.what());
  }
  LatentManifest m;
  m.version = j.at("version").get<std::string>();
  require(m.version == kLatentVersion, ErrorKind::kData, "unsupported latent manifest version " + m.version);
  m.layout = j.at("dimensions").get<LatentLayout>();
  m.frame_height = j.at("frame_height").get<int>();
  m.frame_width = j.at("frame_width").get<int>();
  m.sequence_length = j.at("sequence_length").get<int>();
  m.sequences = j.at("sequences").get<std::vector<std::string>>();
  m.videos = j.at("videos").get<std::vector<int>>();
  m.root = file.parent_path();
  return m;
}

/// Encode and align every video; writes seq_%05d.hlat files and manifest.json.
/// Videos that fail are reported together after the rest are written.
template <class T>
LatentManifest convert_dataset(const dataset::DatasetManifest& data, const recon::ReconNet<T>& net, const fs::path& out_dir) {
  const auto& cfg = net.config();
  require(data.spec.frame_height == cfg.height && data.spec.frame_width == cfg.width, ErrorKind::kIncompatible,
          "dataset frames are " + std::to_string(data.spec.frame_height) + "x" + std::to_string(data.spec.frame_width) +
              " but the checkpoint expects " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  LatentManifest m;
  m.layout = LatentLayout::from(cfg);
  m.frame_height = cfg.height;
  m.frame_width = cfg.width;
  m.sequence_length = data.spec.video_length;
  m.root = out_dir;
  std::vector<std::string> failed;
  for (int i = 0; i < data.video_count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%05d.hlat", i);
    try {
      const auto video = dataset::read_video(data.video_path(static_cast<std::size_t>(i)));
      auto aligned = align_objects(encode_frames(net, video.frames), m.layout);
      write_latent_sequence(out_dir / name, {std::move(aligned.frames), i, std::move(aligned.permutations)});
      m.sequences.emplace_back(name);
      m.videos.push_back(i);
    } catch (const Error& e) {
      failed.push_back(std::to_string(i) + " (" + e.what() + ")");
    }
  }
  if (!failed.empty()) {
    std::string msg = "failed to convert videos:";
    for (const auto& f : failed) msg += " " + f;
    fail(ErrorKind::kData, msg);
  }
  io::write_text(out_dir / "manifest.json", latent_manifest_to_json(m).dump(2));
  return m;
}

}  // namespace hdvp::latent
