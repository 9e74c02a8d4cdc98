#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "hdvp/predict/predictor.hpp"

namespace hdvp::predict {
namespace {

using testing::grad_check;

double huber_reference(double r, double delta) {
  const double a = std::fabs(r);
  return a <= delta ? 0.5 * r * r : delta * a - 0.5 * delta * delta;
}

TEST(Huber, MatchesClosedForm) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-4, 4);
  Tensor<double> a({100, 100}), b({100, 100});
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  for (double delta : {0.3, 1.0, 2.5}) {
    double ref = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) ref += huber_reference(a[i] - b[i], delta);
    ref /= static_cast<double>(a.numel());
    EXPECT_NEAR(huber_loss(Var<double>::constant(a), Var<double>::constant(b), delta).item(), ref, 1e-12);
  }
}

TEST(Huber, HandValues) {
  auto h = [](double p, double t) {
    return huber_loss(Var<double>::constant(Tensor<double>({1}, p)), Var<double>::constant(Tensor<double>({1}, t)), 1.0)
        .item();
  };
  EXPECT_DOUBLE_EQ(h(0.5, 0.0), 0.125);
  EXPECT_DOUBLE_EQ(h(2.0, 0.0), 1.5);
  EXPECT_DOUBLE_EQ(h(-3.0, -3.0), 0.0);
  EXPECT_THROW(huber_loss(Var<double>::constant(Tensor<double>({2})), Var<double>::constant(Tensor<double>({3})), 1.0),
               Error);
}

TEST(Huber, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const auto target = rand_uniform<double>({4, 5}, rng, -2, 2);
  const auto x0 = rand_uniform<double>({4, 5}, rng, -2, 2);
  const auto r = grad_check([&](const Var<double>& x) { return huber_loss(x, Var<double>::constant(target), 0.7); }, x0);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

PoseSplit tiny_split() { return {0, 3, 3, 2}; }

TEST(AverageContent, MeanOverPastFrames) {
  Tensor<float> seq({3, 5});
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 5; ++j) seq.at(t, j) = static_cast<float>(t + 1);
  const auto c = average_content(seq, 2, tiny_split());
  ASSERT_EQ(c.size(), 3u);
  for (float v : c) EXPECT_FLOAT_EQ(v, 1.5f);
  try {
    average_content(seq, 4, tiny_split());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

PredictorConfig tiny_config() {
  PredictorConfig c;
  c.t_past = 4;
  c.t_fut = 3;
  c.hidden = 8;
  return c;
}

TEST(Predictor, ZeroHeadPredictsNoMotion) {
  Predictor<float> m(tiny_config(), tiny_split());
  Rng rng(3);
  const auto past = rand_uniform<float>({4, 5}, rng, -1, 1);
  const auto out = rollout(m, past, 3);
  for (int s = 0; s < 3; ++s) {
    for (int j = 0; j < 2; ++j) EXPECT_FLOAT_EQ(out.at(s, 3 + j), past.at(3, 3 + j));
  }
  const auto zc = average_content(past, 4, tiny_split());
  for (int j = 0; j < 3; ++j) EXPECT_FLOAT_EQ(out.at(2, j), zc[j]);
}

// Predicts the observed difference unchanged: the ideal constant-velocity model.
struct CopyDiff {
  using value_type = double;
  PredictorConfig cfg = tiny_config();
  PoseSplit sp = tiny_split();
  const PredictorConfig& config() const { return cfg; }
  const PoseSplit& split() const { return sp; }
  nn::LstmState<double> zero_state(int) const { return {}; }
  std::pair<Var<double>, nn::LstmState<double>> step(const nn::LstmState<double>& s, const Var<double>&,
                                                      const Var<double>&, const Var<double>& diff) const {
    return {diff, s};
  }
};

TEST(Rollout, CopyDiffExtrapolatesLinearly) {
  Tensor<float> past({4, 5});
  for (int t = 0; t < 4; ++t) {
    past.at(t, 3) = 0.1f + 0.05f * t;
    past.at(t, 4) = -0.2f - 0.03f * t;
  }
  const auto out = rollout(CopyDiff{}, past, 6);
  for (int s = 0; s < 6; ++s) {
    EXPECT_NEAR(out.at(s, 3), 0.1 + 0.05 * (4 + s), 1e-5);
    EXPECT_NEAR(out.at(s, 4), -0.2 - 0.03 * (4 + s), 1e-5);
  }
}

TEST(Rollout, PredictionsTelescope) {
  Rng rng(4);
  auto cfg = tiny_config();
  Predictor<float> m(cfg, tiny_split());
  // give the head non-zero weights so the rollout moves
  const auto params = m.parameters();
  for (auto [name, p] : params.entries()) p.mutable_value() = rand_uniform<float>(p.shape(), rng, -0.3f, 0.3f);
  const auto past = rand_uniform<float>({4, 5}, rng, -1, 1);
  const auto out = rollout(m, past, 5);
  double sum = 0;
  for (int s = 0; s < 5; ++s) sum += (out.at(s, 3) - (s == 0 ? past.at(3, 3) : out.at(s - 1, 3)));
  EXPECT_NEAR(past.at(3, 3) + sum, out.at(4, 3), 1e-5);
  EXPECT_NE(out.at(4, 3), past.at(3, 3));
  EXPECT_THROW(rollout(m, Tensor<float>({3, 5}), 2), Error);
}

std::vector<Tensor<float>> constant_velocity(int count, int len, Rng& rng) {
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<Tensor<float>> out;
  for (int i = 0; i < count; ++i) {
    Tensor<float> s({len, 5});
    const float c0 = u(rng), c1 = u(rng), c2 = u(rng);
    const float x0 = u(rng) * 0.5f, y0 = u(rng) * 0.5f, vx = u(rng) * 0.05f, vy = u(rng) * 0.05f;
    for (int t = 0; t < len; ++t) {
      s.at(t, 0) = c0;
      s.at(t, 1) = c1;
      s.at(t, 2) = c2;
      s.at(t, 3) = x0 + vx * t;
      s.at(t, 4) = y0 + vy * t;
    }
    out.push_back(std::move(s));
  }
  return out;
}

TEST(Training, LearnsConstantVelocity) {
  Rng rng(5);
  const auto train = constant_velocity(64, 10, rng);
  const auto test = constant_velocity(16, 10, rng);
  auto cfg = tiny_config();
  cfg.hidden = 16;
  cfg.epochs = 150;
  cfg.learning_rate = 3e-3;
  double first = -1, last = 0;
  Stage2Options opts;
  opts.on_epoch = [&](const Stage2Epoch& e) {
    if (first < 0) first = e.huber;
    last = e.huber;
  };
  const auto m = train_on_sequences(train, tiny_split(), cfg, opts);
  EXPECT_LT(last, first);
  double mse = 0;
  int n = 0;
  for (const auto& s : test) {
    Tensor<float> past({4, 5});
    std::copy_n(s.data(), past.numel(), past.data());
    const auto out = rollout(m, past, 3);
    for (int t = 0; t < 3; ++t)
      for (int j = 3; j < 5; ++j, ++n) mse += std::pow(out.at(t, j) - s.at(4 + t, j), 2);
  }
  EXPECT_LT(mse / n, 1e-3);
}

TEST(Training, RejectsShortSequences) {
  Rng rng(6);
  auto seqs = constant_velocity(3, 10, rng);
  seqs[1] = Tensor<float>({5, 5});
  try {
    train_on_sequences(seqs, tiny_split(), tiny_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find(": 1"), std::string::npos) << e.what();
  }
}

TEST(Stage2, ReadsOnlyLatentFilesAndRoundTrips) {
  const auto root = fs::temp_directory_path() / "hdvp_stage2";
  fs::remove_all(root);
  Rng rng(7);
  latent::LatentManifest m;
  m.layout = {1, 1, 0, 2};  // k_back 1, one slot with 2 content dims and a bare where
  m.frame_height = m.frame_width = 16;
  m.sequence_length = 10;
  m.root = root;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "seq_" + std::to_string(i) + ".hlat";
    latent::write_latent_sequence(root / name, {rand_uniform<float>({10, m.layout.k()}, rng, -1, 1), i, {}});
    m.sequences.push_back(name);
    m.videos.push_back(i);
  }
  io::write_text(root / "manifest.json", latent::latent_manifest_to_json(m).dump());
  const auto loaded = latent::read_latent_manifest(root / "manifest.json");

  std::vector<io::FileKind> kinds;
  auto cfg = tiny_config();
  cfg.epochs = 2;
  Stage2Options opts;
  opts.log_path = root / "log.jsonl";
  {
    io::ScopedReadObserver obs([&](const fs::path&, io::FileKind k) { kinds.push_back(k); });
    train_stage2(loaded, cfg, root / "pred.ckpt", opts);
  }
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), io::FileKind::kLatent), 4);
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), io::FileKind::kVideo), 0);
  EXPECT_EQ(std::count(kinds.begin(), kinds.end(), io::FileKind::kImage), 0);

  const auto a = load_predictor(root / "pred.ckpt");
  EXPECT_EQ(a.layout.k(), m.layout.k());
  EXPECT_EQ(a.model.config().t_past, cfg.t_past);
  const auto b = train_on_sequences(load_sequences(loaded), PoseSplit::from(m.layout), cfg);
  const auto past = latent::read_latent_sequence(loaded.sequence_path(0)).frames;
  Tensor<float> head({4, m.layout.k()});
  std::copy_n(past.data(), head.numel(), head.data());
  EXPECT_EQ(rollout(a.model, head, 3), rollout(b, head, 3));
  EXPECT_EQ(io::read_text(root / "log.jsonl").find("\"huber\"") != std::string::npos, true);
  fs::remove_all(root);
}

}  // namespace
}  // namespace hdvp::predict
