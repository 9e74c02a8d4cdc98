#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "hdvp/dataset/dataset.hpp"

namespace hdvp::dataset {
namespace {

Corpora builtin(int size) { return Corpora{builtin_digit_glyphs(size), {}}; }

SynthesisSpec small_spec() {
  SynthesisSpec s;
  s.frame_height = s.frame_width = 32;
  s.digit_size = 10;
  s.n_min = 0;
  s.n_max = 2;
  s.video_length = 12;
  return s;
}

// Closed-form billiard: unfold the motion onto a circle of length 2L and fold back.
int billiard(int p0, int v, int t, int limit) {
  const int period = 2 * limit;
  int m = (p0 + v * t) % period;
  if (m < 0) m += period;
  return m <= limit ? m : period - m;
}

TEST(Synthesis, PaperScaleShape) {
  SynthesisSpec s;
  s.frame_height = s.frame_width = 128;
  s.digit_size = 42;
  s.n_min = 0;
  s.n_max = 2;
  s.video_length = 4;
  const auto v = synthesize_video(s, builtin(42), 1);
  EXPECT_EQ(v.frames.shape(), (Shape{4, 128, 128, 3}));
  for (const auto& f : v.truth) EXPECT_LE(f.size(), 2u);
}

TEST(Synthesis, ZeroVelocityKeepsObjectsStill) {
  auto s = small_spec();
  s.velocity_min = s.velocity_max = 0;
  s.n_min = 2;
  const auto v = synthesize_video(s, builtin(s.digit_size), 3);
  for (int t = 1; t < v.length(); ++t)
    for (std::size_t i = 0; i < v.truth[t].size(); ++i) {
      EXPECT_EQ(v.truth[t][i].center_x, v.truth[0][i].center_x);
      EXPECT_EQ(v.truth[t][i].center_y, v.truth[0][i].center_y);
    }
}

TEST(Synthesis, SingleObjectFollowsClosedFormBilliard) {
  SynthesisSpec s;
  s.frame_height = s.frame_width = 32;
  s.digit_size = 10;
  s.n_min = s.n_max = 1;
  s.video_length = 60;
  s.velocity_min = 1;
  s.velocity_max = 2;
  const int limit = 32 - 10;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 200 && checked < 5; ++seed) {
    const auto v = synthesize_video(s, builtin(10), seed);
    const auto& a = v.truth[0][0];
    const auto& b = v.truth[1][0];
    const int x0 = static_cast<int>(a.center_x - 5), y0 = static_cast<int>(a.center_y - 5);
    const int dx = static_cast<int>(b.center_x - a.center_x), dy = static_cast<int>(b.center_y - a.center_y);
    // take only starts whose first step is a plain translation by (+2, +1)
    if (dx != 2 || dy != 1 || x0 + 2 > limit || y0 + 1 > limit) continue;
    ++checked;
    for (int t = 0; t < s.video_length; ++t) {
      EXPECT_EQ(v.truth[t][0].center_x, billiard(x0, 2, t, limit) + 5.0) << "t=" << t;
      EXPECT_EQ(v.truth[t][0].center_y, billiard(y0, 1, t, limit) + 5.0) << "t=" << t;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(Synthesis, ObjectsStayInsideFrameAndCountIsConstant) {
  auto s = small_spec();
  s.velocity_max = 3;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto v = synthesize_video(s, builtin(s.digit_size), seed);
    const auto n = v.truth[0].size();
    EXPECT_LE(n, static_cast<std::size_t>(s.n_max));
    for (const auto& f : v.truth) {
      ASSERT_EQ(f.size(), n);
      for (const auto& r : f) {
        EXPECT_GE(r.center_x - r.size / 2.0, 0.0);
        EXPECT_LE(r.center_x + r.size / 2.0, s.frame_width);
        EXPECT_GE(r.center_y - r.size / 2.0, 0.0);
        EXPECT_LE(r.center_y + r.size / 2.0, s.frame_height);
      }
    }
    for (std::int64_t i = 0; i < v.frames.numel(); ++i) {
      ASSERT_GE(v.frames[i], 0.0f);
      ASSERT_LE(v.frames[i], 1.0f);
    }
  }
}

TEST(Synthesis, RendererReproducesFramesFromTruth) {
  auto s = small_spec();
  const auto corp = builtin(s.digit_size);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto v = synthesize_video(s, corp, seed);
    const auto bg = make_background(s, corp, v.background_index);
    const std::int64_t fe = 32 * 32 * 3;
    for (int t = 0; t < v.length(); ++t) {
      const auto f = render_frame(bg, v.truth[t], corp.glyphs);
      for (std::int64_t i = 0; i < fe; ++i) ASSERT_EQ(f[i], v.frames[t * fe + i]);
    }
  }
}

TEST(Synthesis, HueDriftsAndWraps) {
  auto s = small_spec();
  s.n_min = s.n_max = 1;
  s.color_drift_rate = 0.3;
  const auto v = synthesize_video(s, builtin(s.digit_size), 11);
  for (int t = 1; t < v.length(); ++t) {
    double d = v.truth[t][0].hue - v.truth[t - 1][0].hue;
    d -= std::floor(d);
    EXPECT_NEAR(d, 0.3, 1e-9);
    EXPECT_LT(v.truth[t][0].hue, 1.0);
  }
}

TEST(Synthesis, DeterministicForSeed) {
  auto s = small_spec();
  const auto a = synthesize_video(s, builtin(10), 5);
  const auto b = synthesize_video(s, builtin(10), 5);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_EQ(a.truth, b.truth);
}

TEST(Synthesis, Errors) {
  auto s = small_spec();
  try {
    synthesize_video(s, Corpora{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCorpusMissing);
  }
  s.background_mode = BackgroundMode::kCorpusImage;
  EXPECT_THROW(synthesize_video(s, builtin(10), 1), Error);
  s = small_spec();
  s.digit_size = 32;
  try {
    synthesize_video(s, builtin(10), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidArgument);
  }
}

TEST(Corpus, LoadsNetpbmDirectoriesWithLabels) {
  const auto dir = fs::temp_directory_path() / "hdvp_corpus_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "glyphs" / "3");
  io::write_text(dir / "glyphs" / "3" / "a.pgm", "P2\n2 2\n255\n0 255\n255 0\n");
  io::write_text(dir / "glyphs" / "5_b.pgm", "P2\n2 2\n255\n255 255\n0 0\n");
  const auto glyphs = load_glyphs(dir / "glyphs", 4);
  ASSERT_EQ(glyphs.size(), 2u);
  std::multiset<int> labels{glyphs[0].label, glyphs[1].label};
  EXPECT_EQ(labels, (std::multiset<int>{3, 5}));
  fs::create_directories(dir / "bg");
  Tensor<float> img({4, 6, 3}, 0.25f);
  io::write_netpbm(dir / "bg" / "2_x.ppm", img);
  const auto bgs = load_backgrounds(dir / "bg", 8, 8);
  ASSERT_EQ(bgs.size(), 1u);
  EXPECT_EQ(bgs[0].label, 2);
  EXPECT_EQ(bgs[0].image.shape(), (Shape{8, 8, 3}));
  EXPECT_NEAR(bgs[0].image[0], 64.0f / 255.0f, 1e-6);
  EXPECT_THROW(load_glyphs(dir / "missing", 4), Error);
  fs::remove_all(dir);
}

TEST(Dataset, BuildTwiceIsByteIdentical) {
  const auto root = fs::temp_directory_path() / "hdvp_ds_det";
  fs::remove_all(root);
  auto s = small_spec();
  s.rng_seed = 7;
  const auto corp = builtin(s.digit_size);
  build_dataset(s, corp, 200, root / "a");
  build_dataset(s, corp, 200, root / "b");
  EXPECT_EQ(io::read_text(root / "a" / "manifest.json"), io::read_text(root / "b" / "manifest.json"));
  for (int i = 0; i < 200; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "video_%05d.hvid", i);
    ASSERT_EQ(io::read_file(root / "a" / name), io::read_file(root / "b" / name)) << name;
  }
  fs::remove_all(root);
}

TEST(Dataset, RoundTripAndErrors) {
  const auto root = fs::temp_directory_path() / "hdvp_ds_rt";
  fs::remove_all(root);
  auto s = small_spec();
  const auto corp = builtin(s.digit_size);
  EXPECT_THROW(build_dataset(s, corp, 0, root), Error);
  const auto m = build_dataset(s, corp, 3, root);
  const auto loaded = read_manifest(root / "manifest.json");
  ASSERT_EQ(loaded.video_count, 3);
  for (int i = 0; i < 3; ++i) {
    const auto v = read_video(loaded.video_path(i));
    EXPECT_EQ(v.length(), s.video_length);
    const auto ref = synthesize_video(s, corp, video_seed(s.rng_seed, i));
    EXPECT_EQ(v.frames, ref.frames);
    EXPECT_EQ(v.truth, ref.truth);
  }
  fs::remove_all(root);
}

TEST(FramePairs, OnlyChoiceForTwoFrames) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto [a, b] = sample_frame_pair(2, rng);
    EXPECT_EQ(std::set<int>({a, b}), (std::set<int>{0, 1}));
  }
  EXPECT_THROW(sample_frame_pair(1, rng), Error);
}

TEST(FramePairs, UniformOverUnorderedPairs) {
  Rng rng(2);
  const int t = 16, draws = 10000;
  std::map<std::pair<int, int>, int> counts;
  for (int i = 0; i < draws; ++i) {
    auto [a, b] = sample_frame_pair(t, rng);
    ASSERT_NE(a, b);
    counts[{std::min(a, b), std::max(a, b)}]++;
  }
  const int pairs = t * (t - 1) / 2;
  ASSERT_EQ(static_cast<int>(counts.size()), pairs);
  const double p = 1.0 / pairs, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  double chi2 = 0;
  for (const auto& [_, c] : counts) {
    EXPECT_LT(std::abs(c - mean), 4 * sigma);
    chi2 += (c - mean) * (c - mean) / mean;
  }
  // dof = 119; mean 119, sd ~15.4 -> 4 sd bound
  EXPECT_LT(chi2, 119 + 4 * std::sqrt(2.0 * 119));
}

}  // namespace
}  // namespace hdvp::dataset
