#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "hdvp/recon/train.hpp"

namespace hdvp::recon {
namespace {

using testing::grad_check;

ReconConfig tiny_config() {
  ReconConfig c;
  c.height = c.width = 16;
  c.sub_height = c.sub_width = 8;
  c.max_objects = 2;
  c.k_back = 4;
  c.k_pose = 3;
  c.k_content = 5;
  c.channels = 4;
  c.feature_dim = 8;
  c.detector_hidden = 6;
  c.total_epochs = 4;
  return c;
}

template <class T>
Tensor<T> random_frames(int bsz, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  return rand_uniform<T>({bsz, 3, h, w}, rng, T(0), T(1));
}

// ---- alpha ---------------------------------------------------------------

TEST(Alpha, ZeroAtFirstEpoch) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_alpha(0, 10, rng), 0.0);
}

TEST(Alpha, BoundedAndUniform) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double a = sample_alpha(10, 10, rng);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    const double b = sample_alpha(3, 10, rng);
    EXPECT_LE(b, 0.3);
  }
  double s = 0;
  for (int i = 0; i < 10000; ++i) s += sample_alpha(5, 10, rng);
  EXPECT_NEAR(s / 10000, 0.25, 0.01);
}

TEST(Alpha, RejectsBadEpochs) {
  Rng rng(3);
  EXPECT_THROW(sample_alpha(11, 10, rng), Error);
  EXPECT_THROW(sample_alpha(0, 0, rng), Error);
  EXPECT_THROW(sample_alpha(-1, 5, rng), Error);
}

// ---- content matching ----------------------------------------------------

TEST(MatchContent, IdentityAndHandExample) {
  const std::vector<std::vector<double>> codes{{0, 0}, {3, 1}, {-2, 5}};
  EXPECT_EQ(match_content(codes, codes), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(match_content({{0, 0}, {0, 0}}, {{1, 1}, {0.1, 0}}), (std::vector<int>{1, 1}));
  EXPECT_THROW(match_content({{0, 0}}, {{1, 1}, {0, 0}}), Error);
}

TEST(MatchContent, TiesGoToSmallestIndex) {
  EXPECT_EQ(match_content({{0, 0}, {5, 5}}, {{1, 0}, {0, 1}}), (std::vector<int>{0, 0}));
}

TEST(MatchContent, AgreesWithExhaustiveScan) {
  Rng rng(4);
  std::uniform_int_distribution<int> small(-2, 2);  // small integers force ties
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::vector<double>> a(3, std::vector<double>(2)), b = a;
    for (auto* v : {&a, &b})
      for (auto& row : *v)
        for (auto& x : row) x = small(rng);
    const auto got = match_content(a, b);
    for (int i = 0; i < 3; ++i) {
      std::vector<double> d;
      for (int j = 0; j < 3; ++j) d.push_back(std::pow(a[i][0] - b[j][0], 2) + std::pow(a[i][1] - b[j][1], 2));
      int expect = 0;
      for (int j = 1; j < 3; ++j)
        if (d[j] < d[expect]) expect = j;
      ASSERT_EQ(got[i], expect);
    }
  }
}

TEST(MatchContent, TwoNearest) {
  auto [a, b] = two_nearest({0, 0}, {{3, 0}, {1, 0}, {2, 0}});
  EXPECT_EQ(a, 1);
  EXPECT_EQ(b, 2);
  auto [c, d] = two_nearest({0, 0}, {{3, 0}});
  EXPECT_EQ(c, 0);
  EXPECT_EQ(d, -1);
}

TEST(MixContent, ConvexCombination) {
  EXPECT_EQ(mix_content({2, 0}, {0, 2}, 0.0), (std::vector<double>{2, 0}));
  EXPECT_EQ(mix_content({2, 0}, {0, 2}, 1.0), (std::vector<double>{0, 2}));
  const auto m = mix_content({2, 0}, {0, 2}, 0.25);
  EXPECT_DOUBLE_EQ(m[0], 1.5);
  EXPECT_DOUBLE_EQ(m[1], 0.5);
  EXPECT_THROW(mix_content({1}, {1, 2}, 0.5), Error);

  auto a = Var<double>::constant(Tensor<double>({2, 2}, std::vector<double>{2, 0, 2, 0}));
  auto b = Var<double>::constant(Tensor<double>({2, 2}, std::vector<double>{0, 2, 0, 2}));
  const auto r = mix_rows(a, b, std::vector<double>{0.25, 1.0}).value();
  EXPECT_DOUBLE_EQ(r.at(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(r.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(r.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(r.at(1, 1), 2.0);
}

TEST(PickRows, SelectsPerRowCandidate) {
  auto a = Var<double>::constant(Tensor<double>({2, 1}, std::vector<double>{1, 2}));
  auto b = Var<double>::constant(Tensor<double>({2, 1}, std::vector<double>{10, 20}));
  const auto r = pick_rows<double>({a, b}, {1, 0}).value();
  EXPECT_EQ(r[0], 10);
  EXPECT_EQ(r[1], 2);
}

// ---- compositing ---------------------------------------------------------

Var<double> scalar_image(double v) { return Var<double>::constant(Tensor<double>({1, 3, 1, 1}, v)); }
Var<double> scalar_mask(double v) { return Var<double>::constant(Tensor<double>({1, 1, 1, 1}, v)); }

TEST(Composite, ZeroMasksGiveBackground) {
  auto bg = Var<double>::constant(random_frames<double>(2, 4, 4, 5));
  auto obj = Var<double>::constant(random_frames<double>(2, 4, 4, 6));
  auto zero = Var<double>::constant(Tensor<double>({2, 1, 4, 4}));
  const auto out = composite<double>(bg, {obj, obj}, {zero, zero}).value();
  for (std::int64_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], bg.value()[i], 1e-6);
}

TEST(Composite, OverlappingMasksRenormalise) {
  const auto out = composite<double>(scalar_image(0.2), {scalar_image(1.0), scalar_image(0.6)},
                                     {scalar_mask(0.7), scalar_mask(0.6)})
                       .value();
  EXPECT_NEAR(out[0], (0.7 * 1.0 + 0.6 * 0.6) / 1.3, 1e-12);
  EXPECT_NEAR(out[0], 0.8154, 1e-4);
  const auto under = composite<double>(scalar_image(0.2), {scalar_image(1.0)}, {scalar_mask(0.25)}).value();
  EXPECT_NEAR(under[0], 0.75 * 0.2 + 0.25, 1e-12);
}

TEST(Composite, FullMaskWindowShowsObject) {
  // 8x8 canvas, 4x4 object pasted on the integer-aligned window [2,6) x [2,6)
  auto bg = Var<double>::constant(Tensor<double>({1, 3, 8, 8}, 0.1));
  auto obj = Var<double>::constant(random_frames<double>(1, 4, 4, 7));
  auto ones = Var<double>::constant(Tensor<double>({1, 1, 4, 4}, 1.0));
  auto where = Var<double>::constant(Tensor<double>({1, 4}, std::vector<double>{0, 0, 0.5, 0.5}));
  auto img = ops::paste_window(obj, where, 8, 8);
  auto mask = ops::paste_window(ones, where, 8, 8);
  const auto out = composite<double>(bg, {img}, {mask}).value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_NEAR(out.at(0, c, y + 2, x + 2), obj.value().at(0, c, y, x), 1e-9);
  EXPECT_NEAR(out.at(0, 0, 0, 0), 0.1, 1e-12);
}

// ---- crop ----------------------------------------------------------------

// Independent bilinear resize, half-pixel centres, zero outside.
double bilinear_ref(const Tensor<double>& img, int c, double sy, double sx) {
  const int h = img.dim(2), w = img.dim(3);
  auto px = [&](int y, int x) { return (y < 0 || x < 0 || y >= h || x >= w) ? 0.0 : img.at(0, c, y, x); };
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) + fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

TEST(Crop, FullWindowIsBilinearResize) {
  const auto frame = random_frames<double>(1, 12, 16, 8);
  auto where = Var<double>::constant(Tensor<double>({1, 4}, std::vector<double>{0, 0, 1, 1}));
  const auto same = ops::crop_window(Var<double>::constant(frame), where, 12, 16).value();
  for (std::int64_t i = 0; i < frame.numel(); ++i) EXPECT_NEAR(same[i], frame[i], 1e-12);
  const auto small = ops::crop_window(Var<double>::constant(frame), where, 5, 7).value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 7; ++x) {
        const double sy = (y + 0.5) * 12.0 / 5 - 0.5, sx = (x + 0.5) * 16.0 / 7 - 0.5;
        EXPECT_NEAR(small.at(0, c, y, x), bilinear_ref(frame, c, sy, sx), 1e-12);
      }
}

TEST(Crop, IntegerWindowEqualsSlice) {
  const auto frame = random_frames<double>(1, 16, 16, 9);
  const int x0 = 3, y0 = 5, w = 8, h = 6;
  const double cx = 2.0 * (x0 + w / 2.0) / 16 - 1, cy = 2.0 * (y0 + h / 2.0) / 16 - 1;
  auto where = Var<double>::constant(Tensor<double>({1, 4}, std::vector<double>{cx, cy, w / 16.0, h / 16.0}));
  const auto out = ops::crop_window(Var<double>::constant(frame), where, h, w).value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) EXPECT_NEAR(out.at(0, c, y, x), frame.at(0, c, y0 + y, x0 + x), 1e-12);
}

TEST(Crop, PasteThenCropRoundTrips) {
  const auto sub = random_frames<double>(1, 8, 8, 10);
  auto where = Var<double>::constant(Tensor<double>({1, 4}, std::vector<double>{0.25, -0.25, 0.5, 0.5}));
  const auto canvas = ops::paste_window(Var<double>::constant(sub), where, 16, 16);
  const auto back = ops::crop_window(canvas, where, 8, 8).value();
  double mae = 0;
  for (std::int64_t i = 0; i < sub.numel(); ++i) mae += std::abs(back[i] - sub[i]);
  EXPECT_LT(mae / static_cast<double>(sub.numel()), 1e-3);
}

TEST(Crop, GradientMatchesFiniteDifferences) {
  auto where = Var<double>::constant(Tensor<double>({1, 4}, std::vector<double>{0.13, -0.21, 0.41, 0.57}));
  auto f = [&](const Var<double>& x) { return ops::mean(ops::crop_window(x, where, 5, 6)); };
  EXPECT_LT(grad_check(f, random_frames<double>(1, 10, 12, 11)).max_rel_error, 1e-3);
}

// ---- networks ------------------------------------------------------------

TEST(ReconNet, ShapesRangesAndDeterminism) {
  const auto cfg = tiny_config();
  ReconNet<double> net(cfg);
  auto x = Var<double>::constant(random_frames<double>(3, 16, 16, 12));
  const auto p1 = net.encode_background(x), p2 = net.encode_background(x);
  EXPECT_EQ(p1.mu.shape(), (Shape{3, cfg.k_back}));
  EXPECT_EQ(p1.mu.value(), p2.mu.value());
  EXPECT_EQ(p1.logvar.value(), p2.logvar.value());
  const auto bg = net.decode_background(p1.mu).value();
  EXPECT_EQ(bg.shape(), (Shape{3, 3, 16, 16}));
  for (std::int64_t i = 0; i < bg.numel(); ++i) ASSERT_TRUE(bg[i] >= 0 && bg[i] <= 1);
  EXPECT_EQ(bg, net.decode_background(p1.mu).value());

  auto sub = Var<double>::constant(random_frames<double>(3, 8, 8, 13));
  const auto [pose, content] = net.encode_object(sub);
  EXPECT_EQ(pose.mu.shape(), (Shape{3, cfg.k_pose}));
  EXPECT_EQ(content.mu.shape(), (Shape{3, cfg.k_content}));
  const auto [img, mask] = net.decode_object(pose.mu, content.mu);
  EXPECT_EQ(img.shape(), (Shape{3, 3, 8, 8}));
  EXPECT_EQ(mask.shape(), (Shape{3, 1, 8, 8}));
  for (std::int64_t i = 0; i < mask.numel(); ++i) ASSERT_TRUE(mask.value()[i] >= 0 && mask.value()[i] <= 1);
  EXPECT_EQ(mask.value(), net.decode_object(pose.mu, content.mu).second.value());
}

TEST(ReconNet, ShapeErrors) {
  ReconNet<double> net(tiny_config());
  auto wrong = Var<double>::constant(random_frames<double>(1, 8, 8, 1));
  EXPECT_THROW(net.encode_background(wrong), Error);
  EXPECT_THROW(net.decode_background(Var<double>::constant(Tensor<double>({1, 5}))), Error);
  EXPECT_THROW(net.encode_object(Var<double>::constant(random_frames<double>(1, 16, 16, 1))), Error);
  auto x = Var<double>::constant(random_frames<double>(1, 16, 16, 1));
  EXPECT_THROW(net.detect_objects(x, wrong), Error);
  EXPECT_THROW(net.decode_object(Var<double>::constant(Tensor<double>({1, 2})), Var<double>::constant(Tensor<double>({1, 5}))), Error);
}

TEST(ReconNet, DetectorAlwaysEmitsNBoundedWindows) {
  auto cfg = tiny_config();
  cfg.max_objects = 3;
  ReconNet<double> net(cfg);
  NoGradGuard ng;
  auto empty = Var<double>::constant(Tensor<double>({1, 3, 16, 16}));
  EXPECT_EQ(net.detect_objects(empty, empty).size(), 3u);
  Rng rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    // random inputs well outside the image range push the squashing hard
    auto x = Var<double>::constant(randn<double>({100, 3, 16, 16}, rng, 20.0));
    for (const auto& w : net.detect_objects(x, x)) {
      ASSERT_EQ(w.shape(), (Shape{100, 4}));
      for (int b = 0; b < 100; ++b) {
        ASSERT_GE(w.value().at(b, 0), -1.0);
        ASSERT_LE(w.value().at(b, 0), 1.0);
        ASSERT_GE(w.value().at(b, 1), -1.0);
        ASSERT_LE(w.value().at(b, 1), 1.0);
        ASSERT_GT(w.value().at(b, 2), 0.0);
        ASSERT_LE(w.value().at(b, 2), 1.0);
        ASSERT_GT(w.value().at(b, 3), 0.0);
        ASSERT_LE(w.value().at(b, 3), 1.0);
      }
    }
  }
}

TEST(ReconNet, MaskGradientWrtCodeMatchesFiniteDifferences) {
  ReconNet<double> net(tiny_config());
  auto f = [&](const Var<double>& z) {
    return ops::mean(net.decode_object(ops::slice(z, 1, 0, 3), ops::slice(z, 1, 3, 5)).second);
  };
  Rng rng(15);
  EXPECT_LT(grad_check(f, randn<double>({2, 8}, rng)).max_rel_error, 1e-3);
}

// ---- losses --------------------------------------------------------------

TEST(Losses, HandValues) {
  auto d = Var<double>::constant(Tensor<double>({4}, 1.7));
  EXPECT_NEAR(triplet_loss(d, d, 0.5).item(), 0.5, 1e-12);
  auto half = Var<double>::constant(Tensor<double>({2, 1, 3, 3}, 0.5));
  EXPECT_NEAR(mask_loss(half).item(), 0.0, 1e-15);
  auto zero = Var<double>::constant(Tensor<double>({5, 1}));
  // D = 0.5 everywhere: -ln .5 - ln .5 and ln(1 - .5)
  EXPECT_NEAR(pose_dis_loss(zero, zero).item(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(pose_gen_loss(zero).item(), -std::log(2.0), 1e-12);
  EXPECT_NEAR(image_gen_loss(zero).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(image_dis_loss(zero, zero).item(), 2 * std::log(2.0), 1e-12);
}

TEST(Losses, R1EstimatorMatchesGradientNorm) {
  // D(x) = sum_i a_i x_i has ||grad||^2 = sum a_i^2 everywhere
  Rng rng(16);
  const auto a = randn<double>({1, 3, 4, 4}, rng);
  double norm2 = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) norm2 += a[i] * a[i];
  auto d = [&](const Var<double>& x) {
    auto prod = ops::mul(x, Var<double>::constant(a));
    return ops::reshape(ops::sum(prod), {1, 1});
  };
  double s = 0;
  const int reps = 4000;
  for (int r = 0; r < reps; ++r) s += r1_penalty<double>(d, Tensor<double>({1, 3, 4, 4}, 0.3), rng).item();
  EXPECT_NEAR(s / reps, norm2, 0.1 * norm2);
}

struct Batch {
  Var<double> x, xp, xpp;
};

Batch random_batch(std::uint64_t seed, bool leaf_x = false) {
  const auto x = random_frames<double>(2, 16, 16, seed);
  return {leaf_x ? Var<double>::leaf(x) : Var<double>::constant(x),
          Var<double>::constant(random_frames<double>(2, 16, 16, seed + 1)),
          Var<double>::constant(random_frames<double>(2, 16, 16, seed + 2))};
}

TEST(Losses, ReportTotalsAndSwap) {
  const auto cfg = tiny_config();
  ReconNet<double> net(cfg);
  Rng drng(17);
  PoseDiscriminator<double> pd(cfg.k_pose, drng);
  ImageDiscriminator<double> id(cfg.channels, 16, 16, drng);
  const auto b = random_batch(18);
  Rng rng(19);
  const auto f = forward_pair(net, b.x, b.xp, b.xpp, 2, rng);
  // the background used for x is decoded from the code of x'
  EXPECT_EQ(f.background_x.value(), net.decode_background(f.z_back_xp).value());
  EXPECT_NE(f.background_x.value(), net.decode_background(f.z_back_x).value());
  for (double a : f.alpha) EXPECT_LE(a, 0.5);

  const auto g = compute_losses(f, b.x, 1, cfg, &pd, &id);
  const auto& r = g.report;
  const auto& w = cfg.weights;
  const double expect = w.recon * r.recon + w.kl * r.kl + w.adv_img * r.adv_img_G + w.back * r.l_back +
                        w.content * r.l_content + w.adv_pose * r.l_adv_pose_E + w.mask * r.l_mask;
  EXPECT_NEAR(r.total, expect, 1e-9 * std::max(1.0, std::abs(expect)));
  EXPECT_GE(r.recon, 0);
  EXPECT_GE(r.kl, 0);
  EXPECT_GE(r.l_content, 0);

  // mask loss is switched off from the cutoff epoch on
  const auto late = compute_losses(f, b.x, 2, cfg, &pd, &id).report;
  EXPECT_NEAR(late.total, expect - w.mask * r.l_mask, 1e-9 * std::max(1.0, std::abs(expect)));
  EXPECT_EQ(late.l_mask, r.l_mask);
}

TEST(Losses, MissingUnrelatedFrameIsConfigError) {
  const auto cfg = tiny_config();
  ReconNet<double> net(cfg);
  Rng drng(20);
  PoseDiscriminator<double> pd(cfg.k_pose, drng);
  const auto b = random_batch(21);
  Rng rng(22);
  const auto f = forward_pair(net, b.x, b.xp, Var<double>(), 0, rng);
  try {
    compute_losses<double>(f, b.x, 0, cfg, &pd, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  auto no_pose = cfg;
  no_pose.weights.adv_pose = 0;
  EXPECT_NO_THROW(compute_losses<double>(f, b.x, 0, no_pose, nullptr, nullptr));
}

TEST(Losses, TotalGradientWrtPixelMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  ReconNet<double> net(cfg);
  Rng drng(23);
  PoseDiscriminator<double> pd(cfg.k_pose, drng);
  ImageDiscriminator<double> id(cfg.channels, 16, 16, drng);
  const auto b = random_batch(24);
  auto f = [&](const Var<double>& x) {
    Rng rng(25);  // identical noise for every evaluation
    const auto fw = forward_pair(net, x, b.xp, b.xpp, 2, rng);
    return compute_losses(fw, x, 1, cfg, &pd, &id).total;
  };
  // probe a spread of pixels
  const auto r = grad_check(f, b.x.value(), 1e-6, 97, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

template <class T>
void copy_params(const ParamSet<float>& src, const ParamSet<T>& dst) {
  ASSERT_EQ(src.entries().size(), dst.entries().size());
  for (std::size_t k = 0; k < src.entries().size(); ++k) {
    Var<T> d = dst.entries()[k].second;
    const auto& v = src.entries()[k].second.value();
    for (std::int64_t i = 0; i < v.numel(); ++i) d.mutable_value()[i] = static_cast<T>(v[i]);
  }
}

TEST(Losses, TotalGradientAtSinglePrecision) {
  // float tape gradient against a double-precision finite difference of the same weights
  const auto cfg = tiny_config();
  ReconNet<float> net(cfg);
  ReconNet<double> ref(cfg);
  Rng drng(23), drng2(23);
  PoseDiscriminator<float> pd(cfg.k_pose, drng);
  ImageDiscriminator<float> id(cfg.channels, 16, 16, drng);
  PoseDiscriminator<double> pd2(cfg.k_pose, drng2);
  ImageDiscriminator<double> id2(cfg.channels, 16, 16, drng2);
  copy_params(net.parameters(), ref.parameters());
  copy_params(pd.parameters(), pd2.parameters());
  copy_params(id.parameters(), id2.parameters());

  const auto x0 = random_frames<double>(2, 16, 16, 26);
  const auto xp = random_frames<double>(2, 16, 16, 27), xpp = random_frames<double>(2, 16, 16, 28);
  auto x = Var<float>::leaf(x0.cast<float>());
  {
    Rng rng(29);
    backward(compute_losses(forward_pair(net, x, Var<float>::constant(xp.cast<float>()),
                                         Var<float>::constant(xpp.cast<float>()), 2, rng),
                            x, 1, cfg, &pd, &id)
                 .total);
  }
  auto f = [&](const Var<double>& v) {
    Rng rng(29);
    return compute_losses(forward_pair(ref, v, Var<double>::constant(xp), Var<double>::constant(xpp), 2, rng), v, 1,
                          cfg, &pd2, &id2)
        .total;
  };
  double worst = 0;
  for (std::int64_t i = 5; i < x0.numel(); i += 61) {
    const double h = 1e-6;
    Tensor<double> a = x0, c = x0;
    a[i] += h;
    c[i] -= h;
    NoGradGuard ng;
    const double num = (f(Var<double>::constant(a)).item() - f(Var<double>::constant(c)).item()) / (2 * h);
    const double ana = x.grad()[i];
    worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-3}));
  }
  EXPECT_LT(worst, 1e-2);
}

// ---- config / training / checkpoint ------------------------------------

TEST(ReconConfig, Validation) {
  auto c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.total_epochs = 0;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  c = tiny_config();
  c.sub_height = 17;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.weights.kl = -1;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<ReconConfig>()), j);
}

dataset::DatasetManifest tiny_dataset(const fs::path& root) {
  dataset::SynthesisSpec s;
  s.frame_height = s.frame_width = 16;
  s.digit_size = 6;
  s.video_length = 4;
  return dataset::build_dataset(s, dataset::Corpora{dataset::builtin_digit_glyphs(6), {}}, 3, root);
}

TEST(TrainStage1, LogsEveryEpochAndCheckpointRoundTrips) {
  const auto root = fs::temp_directory_path() / "hdvp_recon_train";
  fs::remove_all(root);
  const auto m = tiny_dataset(root / "data");
  auto cfg = tiny_config();
  cfg.total_epochs = 2;
  cfg.pairs_per_video = 2;
  cfg.batch_size = 4;
  TrainOptions opts;
  opts.log_path = root / "log.jsonl";
  const auto net = train_stage1(m, cfg, root / "recon.ckpt", opts);
  std::istringstream log(io::read_text(opts.log_path));
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("epoch").get<int>(), ++lines);
    for (const char* k : {"recon", "kl", "adv_img_G", "adv_img_D", "l_back", "l_content", "l_adv_pose_E",
                          "l_adv_pose_D", "l_mask", "total"})
      EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(lines, 2);

  const auto loaded = load_recon<float>(root / "recon.ckpt");
  auto x = Var<float>::constant(random_frames<float>(1, 16, 16, 30));
  NoGradGuard ng;
  EXPECT_EQ(loaded.encode_background(x).mu.value(), net.encode_background(x).mu.value());
  const auto c = io::read_checkpoint(root / "recon.ckpt");
  EXPECT_EQ(c.epoch, 2);
  EXPECT_EQ(c.kind, "recon");
  fs::remove_all(root);
}

TEST(TrainStage1, SameSeedSameWeights) {
  const auto root = fs::temp_directory_path() / "hdvp_recon_det";
  fs::remove_all(root);
  const auto m = tiny_dataset(root / "data");
  auto cfg = tiny_config();
  cfg.total_epochs = 1;
  cfg.pairs_per_video = 2;
  train_stage1(m, cfg, root / "a.ckpt");
  train_stage1(m, cfg, root / "b.ckpt");
  EXPECT_EQ(io::read_file(root / "a.ckpt"), io::read_file(root / "b.ckpt"));
  fs::remove_all(root);
}

TEST(TrainStage1, NonFiniteLossAborts) {
  ReconTrainer<float> trainer(tiny_config());
  auto x = random_frames<float>(2, 16, 16, 31);
  x[7] = std::numeric_limits<float>::quiet_NaN();
  try {
    trainer.step(x, random_frames<float>(2, 16, 16, 32), random_frames<float>(2, 16, 16, 33), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_NE(std::string(e.what()).find("recon"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace hdvp::recon
