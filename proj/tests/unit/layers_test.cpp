#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ramreid/error.hpp"
#include "ramreid/layers.hpp"
#include "ramreid/ops.hpp"
#include "ramreid/optim.hpp"

namespace ramreid {
namespace {

using testing::Array4;
using testing::gradcheck;
using testing::random_tensor;

Array4 to_array(const Tensor& t) {
  Array4 a{t.dim(0), t.dim(1), t.dim(2), t.dim(3), {t.data().begin(), t.data().end()}};
  return a;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// ---- convolution -----------------------------------------------------------

TEST(Conv2d, AllOnesWindowSums) {
  const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  const Tensor b = Tensor::zeros({1});
  const Tensor y = conv2d(x, w, b, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(values(y), std::vector<double>(4, 4.0));
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {2, 1, 5, 4});
  const Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
  EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, MatchesSixLoopReference) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor(rng, {2, 3, 8, 8});
    const Tensor w = random_tensor(rng, {4, 3, 3, 3});
    const Tensor b = random_tensor(rng, {4});
    for (std::size_t pad : {0u, 1u}) {
      const Tensor y = conv2d(x, w, b, 2, pad);
      const Array4 ref = testing::naive_conv2d(to_array(x), to_array(w), values(b), 2, pad);
      ASSERT_EQ(y.shape(), (Shape{ref.n, ref.c, ref.h, ref.w}));
      for (std::size_t i = 0; i < ref.v.size(); ++i) EXPECT_NEAR(y.data()[i], ref.v[i], 1e-12);
    }
  }
}

TEST(Conv2d, Errors) {
  const Tensor x = Tensor::zeros({1, 2, 4, 4});
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), 1, 0), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({1}), 1, 0), ShapeError);
  EXPECT_THROW(conv_output_size(4, 5, 1, 0), ShapeError);
  EXPECT_EQ(conv_output_size(4, 5, 1, 1), 2u);
}

// ---- max pooling -----------------------------------------------------------

TEST(MaxPool, ThirteenToSix) {
  const Tensor y = max_pool2d(Tensor::zeros({1, 2, 13, 13}), 3, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  EXPECT_EQ(conv_output_size(13, 3, 2, 0), 6u);
}

TEST(MaxPool, ConstantInputSingleWinnerPerWindow) {
  Tensor x = Tensor::full({1, 1, 4, 4}, 0.5, true);
  const Tensor y = max_pool2d(x, 2, 2);
  EXPECT_EQ(values(y), std::vector<double>(4, 0.5));
  sum(y).backward();
  // First element of each 2x2 window receives the whole unit of gradient.
  const std::vector<double> expect = {1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), expect);
}

TEST(MaxPool, MatchesBruteForceWindows) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, {1, 1, 5, 5});
    const Array4 ref = testing::naive_max_pool(to_array(x), 2, 2);
    EXPECT_EQ(values(max_pool2d(x, 2, 2)), ref.v);
  }
}

TEST(MaxPool, GradientMassIsConserved) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {2, 3, 7, 7});
    x.set_requires_grad(true);
    const Tensor y = max_pool2d(x, 3, 2);
    const Tensor r = random_tensor(rng, y.shape());
    sum(mul(y, r)).backward();
    double in = 0.0, out = 0.0;
    for (double g : x.grad()) in += g;
    for (double g : r.data()) out += g;
    EXPECT_NEAR(in, out, 1e-12);
  }
}

TEST(MaxPool, WindowLargerThanInput) {
  EXPECT_THROW(max_pool2d(Tensor::zeros({1, 1, 2, 2}), 3, 1), ShapeError);
}

// ---- batch normalization ----------------------------------------------------

struct ChannelStats {
  double mean = 0.0;
  double var = 0.0;  // biased
};

ChannelStats stats(const Tensor& y, std::size_t channel) {
  const std::size_t n = y.dim(0), c = y.dim(1), hw = y.numel() / (n * c);
  ChannelStats s;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < hw; ++k) s.mean += y.data()[(i * c + channel) * hw + k];
  }
  s.mean /= static_cast<double>(n * hw);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < hw; ++k) {
      const double d = y.data()[(i * c + channel) * hw + k] - s.mean;
      s.var += d * d;
    }
  }
  s.var /= static_cast<double>(n * hw);
  return s;
}

TEST(BatchNorm, TrainingNormalizesEachChannel) {
  Rng rng(5);
  BatchNormLayer bn = BatchNormLayer::create(3, 0.9, 1e-5);
  const Tensor x = random_tensor(rng, {4, 3, 5, 5}, -3.0, 7.0);
  const Tensor y = bn.forward(x, true);
  for (std::size_t c = 0; c < 3; ++c) {
    const ChannelStats s = stats(y, c);
    EXPECT_LE(std::abs(s.mean), 1e-10);
    // eps shrinks the variance slightly below 1.
    const ChannelStats in = stats(x, c);
    EXPECT_NEAR(s.var, in.var / (in.var + 1e-5), 1e-12);
    EXPECT_NEAR(s.var, 1.0, 1e-5);
  }
}

TEST(BatchNorm, UnitVarianceWithoutEpsilon) {
  Rng rng(6);
  BatchNormLayer bn = BatchNormLayer::create(2, 0.9, 1e-300);
  const Tensor y = bn.forward(random_tensor(rng, {5, 2, 3, 3}), true);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(stats(y, c).var, 1.0, 1e-8);
}

TEST(BatchNorm, AffineOnNormalizedInput) {
  Rng rng(7);
  BatchNormLayer prep = BatchNormLayer::create(2, 0.9, 1e-300);
  const Tensor normalized = prep.forward(random_tensor(rng, {6, 2, 2, 2}), true);
  BatchNormLayer bn = BatchNormLayer::create(2, 0.9, 1e-300);
  std::fill(bn.gamma.mutable_data().begin(), bn.gamma.mutable_data().end(), 2.0);
  std::fill(bn.beta.mutable_data().begin(), bn.beta.mutable_data().end(), 3.0);
  const Tensor y = bn.forward(normalized, true);
  for (std::size_t c = 0; c < 2; ++c) {
    const ChannelStats s = stats(y, c);
    EXPECT_NEAR(s.mean, 3.0, 1e-8);
    EXPECT_NEAR(std::sqrt(s.var), 2.0, 1e-8);
  }
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  Rng rng(8);
  BatchNormLayer bn = BatchNormLayer::create(2, 0.9, 1e-5);
  const Tensor x = random_tensor(rng, {4, 2});
  bn.forward(x, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0;
    for (std::size_t i = 0; i < 4; ++i) m += x.data()[i * 2 + c];
    m /= 4.0;
    double v = 0.0;
    for (std::size_t i = 0; i < 4; ++i) v += (x.data()[i * 2 + c] - m) * (x.data()[i * 2 + c] - m);
    v /= 3.0;  // unbiased
    EXPECT_NEAR(bn.running_mean.data()[c], 0.1 * m, 1e-15);
    EXPECT_NEAR(bn.running_var.data()[c], 0.9 + 0.1 * v, 1e-15);
    EXPECT_GT(bn.running_var.data()[c], 0.0);
  }
}

TEST(BatchNorm, InferenceIgnoresBatchComposition) {
  Rng rng(9);
  BatchNormLayer bn = BatchNormLayer::create(3, 0.9, 1e-5);
  for (int i = 0; i < 3; ++i) bn.forward(random_tensor(rng, {4, 3, 2, 2}), true);
  const Tensor a = random_tensor(rng, {1, 3, 2, 2});
  const Tensor others = random_tensor(rng, {1, 3, 2, 2});
  std::vector<double> joined = values(a);
  joined.insert(joined.end(), others.data().begin(), others.data().end());
  const Tensor alone = bn.forward(a, false);
  const Tensor together = bn.forward(Tensor::from_data({2, 3, 2, 2}, joined), false);
  for (std::size_t i = 0; i < alone.numel(); ++i) EXPECT_EQ(alone.data()[i], together.data()[i]);
}

TEST(BatchNorm, SingleSampleTrainingRejected) {
  BatchNormLayer bn = BatchNormLayer::create(2, 0.9, 1e-5);
  EXPECT_THROW(bn.forward(Tensor::zeros({1, 2, 3, 3}), true), ValueError);
  EXPECT_NO_THROW(bn.forward(Tensor::zeros({1, 2, 3, 3}), false));
}

TEST(BatchNorm, CreateValidates) {
  EXPECT_THROW(BatchNormLayer::create(2, 1.0, 1e-5), ValueError);
  EXPECT_THROW(BatchNormLayer::create(2, 0.9, 0.0), ValueError);
}

// ---- softmax cross-entropy -------------------------------------------------

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
  const std::vector<int> labels = {3, 7};
  const Tensor loss = softmax_cross_entropy(Tensor::zeros({2, 10}), labels);
  EXPECT_NEAR(loss.item(), std::log(10.0), 1e-15);
  EXPECT_NEAR(loss.item(), 2.302585, 1e-6);
}

TEST(SoftmaxCrossEntropy, HugeMarginGoesToZero) {
  std::vector<double> z(3 * 4, 0.0);
  const std::vector<int> labels = {1, 0, 3};
  for (std::size_t r = 0; r < 3; ++r) z[r * 4 + static_cast<std::size_t>(labels[r])] = 1e4;
  const Tensor loss = softmax_cross_entropy(Tensor::from_data({3, 4}, z), labels);
  EXPECT_GE(loss.item(), 0.0);
  EXPECT_LT(loss.item(), 1e-12);
}

TEST(SoftmaxCrossEntropy, MatchesDirectFormula) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor(rng, {4, 7}, -3.0, 3.0);
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.index(7)));
    const double got = softmax_cross_entropy(z, labels).item();
    EXPECT_NEAR(got, testing::naive_softmax_ce(values(z), 4, 7, labels), 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  const std::vector<int> bad = {0, 5};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({2, 5}), bad), ValueError);
  const std::vector<int> negative = {-1, 0};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({2, 5}), negative), ValueError);
}

// ---- gradient checks -------------------------------------------------------

TEST(GradCheck, Layers) {
  Rng rng(99);
  const int kTrials = 20;
  for (int t = 0; t < kTrials; ++t) {
    const auto conv = gradcheck(
        [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
        {random_tensor(rng, {2, 2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
        rng);
    EXPECT_LE(conv.max_relative_error, 1e-6) << "conv trial " << t;

    const auto pool = gradcheck([](const auto& in) { return max_pool2d(in[0], 3, 2); },
                                {testing::spread_tensor(rng, {1, 2, 5, 5})}, rng);
    EXPECT_LE(pool.max_relative_error, 1e-6) << "maxpool trial " << t;

    const auto fc = gradcheck([](const auto& in) { return linear(in[0], in[1], in[2]); },
                              {random_tensor(rng, {3, 5}), random_tensor(rng, {4, 5}),
                               random_tensor(rng, {4})},
                              rng);
    EXPECT_LE(fc.max_relative_error, 1e-6) << "fc trial " << t;

    const auto bn4 = gradcheck(
        [](const auto& in) {
          Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
          return batch_norm(in[0], in[1], in[2], rm, rv, 0.9, 1e-5, true);
        },
        {random_tensor(rng, {3, 2, 2, 2}), random_tensor(rng, {2}), random_tensor(rng, {2})}, rng);
    EXPECT_LE(bn4.max_relative_error, 1e-6) << "batchnorm NCHW trial " << t;

    const auto bn2 = gradcheck(
        [](const auto& in) {
          Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
          return batch_norm(in[0], in[1], in[2], rm, rv, 0.9, 1e-5, true);
        },
        {random_tensor(rng, {4, 3}), random_tensor(rng, {3}), random_tensor(rng, {3})}, rng);
    EXPECT_LE(bn2.max_relative_error, 1e-6) << "batchnorm (N,C) trial " << t;

    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.index(5)));
    const auto ce = gradcheck(
        [labels](const auto& in) { return softmax_cross_entropy(in[0], labels); },
        {random_tensor(rng, {4, 5})}, rng);
    EXPECT_LE(ce.max_relative_error, 1e-6) << "softmax-ce trial " << t;
  }
}

// ---- SGD ---------------------------------------------------------------------

TEST(Sgd, ScheduleDropsEveryTenEpochs) {
  const SgdState s;
  for (int e = 0; e < 10; ++e) EXPECT_EQ(learning_rate_at(s, e), 0.001);
  for (int e = 10; e < 20; ++e) EXPECT_EQ(learning_rate_at(s, e), 0.001 * 0.1);
  EXPECT_EQ(learning_rate_at(s, 20), 0.001 * 0.1 * 0.1);
  EXPECT_THROW(learning_rate_at(s, -1), ValueError);
}

TEST(Sgd, ScalarStepArithmetic) {
  Tensor p = Tensor::from_data({}, {1.0}, true);
  p.mutable_grad()[0] = 2.0;
  SgdState state;
  state.learning_rate = 0.1;
  Sgd sgd(state);
  const std::vector<NamedTensor> params = {{"p", p}};
  sgd.step(params, 0);
  EXPECT_DOUBLE_EQ(p.item(), 0.8);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Sgd, ZeroGradientLeavesParameters) {
  Rng rng(12);
  Tensor p = random_tensor(rng, {3, 3});
  p.set_requires_grad(true);
  p.zero_grad();
  const std::vector<double> before = values(p);
  Sgd sgd(SgdState{});
  const std::vector<NamedTensor> params = {{"p", p}};
  sgd.step(params, 3);
  EXPECT_EQ(values(p), before);
}

TEST(Sgd, MissingGradientRejected) {
  Tensor p = Tensor::zeros({2}, true);
  Sgd sgd(SgdState{});
  const std::vector<NamedTensor> params = {{"layer.weight", p}};
  try {
    sgd.step(params, 0);
    FAIL();
  } catch (const StateError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

TEST(Sgd, StateValidation) {
  SgdState s;
  s.decay_factor = 0.0;
  EXPECT_THROW(s.validate(), ValueError);
  s.decay_factor = 1.5;
  EXPECT_THROW(s.validate(), ValueError);
  s = SgdState{};
  s.decay_epoch_period = 0;
  EXPECT_THROW(s.validate(), ValueError);
}

TEST(KaimingUniform, WithinBound) {
  Rng rng(13);
  const Tensor w = kaiming_uniform({16, 8, 3, 3}, 72, rng);
  const double bound = std::sqrt(6.0 / 72.0);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
}

}  // namespace
}  // namespace ramreid
