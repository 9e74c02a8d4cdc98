#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "hdvp/core/nn.hpp"
#include "hdvp/core/sampler.hpp"

namespace hdvp {
namespace {

using testing::grad_check;

Tensor<double> random_tensor(const Shape& s, std::uint64_t seed) {
  Rng rng(seed);
  return randn<double>(s, rng);
}

TEST(Autograd, ElementwiseChainMatchesFiniteDifferences) {
  auto f = [](const Var<double>& x) {
    auto a = ops::sigmoid(x);
    auto b = ops::tanh(ops::scale(x, 0.7));
    auto c = ops::softplus(ops::sub(a, b));
    auto d = ops::div(ops::mul(c, a), ops::add_scalar(ops::square(b), 1.0));
    return ops::mean(ops::add(ops::leaky_relu(d, 0.1), ops::clamp_min(x, 0.3)));
  };
  auto r = grad_check(f, random_tensor({3, 5}, 1));
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Autograd, LinearConcatSliceMatchFiniteDifferences) {
  Rng rng(2);
  nn::Linear<double> lin(14, 4, rng);
  auto f = [&](const Var<double>& x) {
    auto y = lin(ops::concat<double>({x, ops::square(x)}, 1));
    auto s = ops::slice(ops::reshape(y, {3, 2, 2}), 1, 1, 1);
    return ops::sum(ops::sum_last(ops::exp(s)));
  };
  Tensor<double> x0 = random_tensor({3, 7}, 3);
  EXPECT_THROW(lin(Var<double>::constant(x0)), Error);
  EXPECT_LT(grad_check(f, x0).max_rel_error, 1e-5);
}

TEST(Autograd, ConvUpsampleMatchFiniteDifferences) {
  Rng rng(4);
  nn::Conv2d<double> c1(3, 4, 3, 2, 1, rng);
  nn::Conv2d<double> c2(4, 2, 3, 1, 1, rng);
  auto f = [&](const Var<double>& x) {
    auto y = c2(ops::upsample2x(ops::leaky_relu(c1(x))));
    return ops::mean(ops::square(y));
  };
  EXPECT_LT(grad_check(f, random_tensor({2, 3, 6, 6}, 5)).max_rel_error, 1e-5);
}

TEST(Autograd, ConvWeightGradientMatchesFiniteDifferences) {
  Rng rng(6);
  Tensor<double> x0 = random_tensor({2, 3, 5, 5}, 7);
  Tensor<double> b0 = random_tensor({4}, 8);
  auto f = [&](const Var<double>& w) {
    return ops::sum(ops::square(ops::conv2d(Var<double>::constant(x0), w, Var<double>::constant(b0), 2, 1)));
  };
  EXPECT_LT(grad_check(f, random_tensor({4, 3, 3, 3}, 9)).max_rel_error, 1e-5);
}

TEST(Autograd, LstmCellMatchesFiniteDifferences) {
  Rng rng(10);
  nn::LstmCell<double> cell(3, 5, rng);
  auto f = [&](const Var<double>& x) {
    auto s = cell.zero_state(2);
    s = cell(x, s);
    s = cell(ops::scale(x, 0.5), s);
    return ops::sum(ops::mul(s.h, s.c));
  };
  EXPECT_LT(grad_check(f, random_tensor({2, 3}, 11)).max_rel_error, 1e-5);
}

TEST(Autograd, CrossEntropyMatchesFiniteDifferences) {
  std::vector<int> labels{0, 2, 1};
  auto f = [&](const Var<double>& x) { return ops::cross_entropy(x, labels); };
  EXPECT_LT(grad_check(f, random_tensor({3, 4}, 12)).max_rel_error, 1e-5);
}

TEST(Autograd, GaussianKlIsZeroAtPriorAndPositiveElsewhere) {
  auto mu = Var<double>::constant(Tensor<double>({2, 3}));
  auto lv = Var<double>::constant(Tensor<double>({2, 3}));
  EXPECT_DOUBLE_EQ(ops::gaussian_kl(mu, lv, 2).item(), 0.0);
  auto mu1 = Var<double>::constant(Tensor<double>({1, 1}, 1.0));
  // 0.5 * (1 + 1 - 0 - 1) = 0.5
  EXPECT_DOUBLE_EQ(ops::gaussian_kl(mu1, Var<double>::constant(Tensor<double>({1, 1})), 1).item(), 0.5);
}

TEST(Sampler, ThetaGradientMatchesFiniteDifferencesAwayFromKinks) {
  Tensor<double> img = random_tensor({1, 2, 8, 8}, 13);
  auto f = [&](const Var<double>& z) {
    return ops::sum(ops::square(ops::crop_window(Var<double>::constant(img), z, 5, 5)));
  };
  Tensor<double> z0({1, 4}, std::vector<double>{0.113, -0.071, 0.537, 0.611});
  EXPECT_LT(grad_check(f, z0, 1e-7).max_rel_error, 1e-4);
  auto g = [&](const Var<double>& z) {
    return ops::sum(ops::square(ops::paste_window(Var<double>::constant(img), z, 11, 9)));
  };
  EXPECT_LT(grad_check(g, z0, 1e-7).max_rel_error, 1e-4);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  auto x = Var<double>::leaf(Tensor<double>({2}, 1.0));
  NoGradGuard guard;
  auto y = ops::sum(ops::square(x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(ActivationMeter, TracksLiveAndPeakNonParameterElements) {
  auto& m = ActivationMeter::local();
  const auto base = m.live;
  m.reset_peak();
  {
    auto p = Var<float>::parameter(Tensor<float>({100}));
    EXPECT_EQ(m.live, base);
    auto a = Var<float>::constant(Tensor<float>({10}));
    auto b = ops::square(a);
    EXPECT_EQ(m.live, base + 20);
  }
  EXPECT_EQ(m.live, base);
  EXPECT_EQ(m.peak, base + 20);
}

TEST(Adam, MinimisesAQuadratic) {
  auto w = Var<double>::parameter(Tensor<double>({3}, std::vector<double>{1, -2, 3}));
  ParamSet<double> ps;
  ps.add("w", w);
  Adam<double> opt(ps, 0.05);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    backward(ops::sum(ops::square(w)));
    opt.step();
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(w.value()[i], 0.0, 1e-2);
}

}  // namespace
}  // namespace hdvp
