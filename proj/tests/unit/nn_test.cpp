// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lofi/errors.hpp"
#include "test_util.hpp"

namespace lofi {
namespace {

using testing::max_rel_error;
using testing::random_batch;
using testing::tiny_net;

TEST(NetworkConfig, Validation) {
  NetworkConfig c;
  EXPECT_NO_THROW(c.validate());
  c.drop_prob = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.hidden_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(NetworkConfig, ParamCountMatchesLayout) {
  const NetworkConfig c = tiny_net();
  const ParamLayout l = ParamLayout::of(c);
  EXPECT_EQ(l.total, c.param_count());
  // embed 5x4+5, two blocks 5x5+5, head 3x5+3
  EXPECT_EQ(c.param_count(), 25u + 2 * 30u + 18u);
  std::size_t covered = 0;
  for (const auto& s : l.segments()) {
    EXPECT_EQ(s.offset, covered) << s.name;
    covered += s.size;
  }
  EXPECT_EQ(covered, l.total);
}

TEST(InitParams, Deterministic) {
  const auto c = tiny_net();
  EXPECT_TRUE(init_params(c, 0).bitwise_equal(init_params(c, 0)));
  EXPECT_FALSE(init_params(c, 0).bitwise_equal(init_params(c, 1)));
}

TEST(InitParams, ZeroHead) {
  const auto c = tiny_net();
  const ParamVector p = init_params(c, 3, true);
  const auto l = p.layout();
  for (std::size_t i = l.head_offset(); i < l.total; ++i) EXPECT_EQ(p[i], 0.0);
  EXPECT_TRUE(p.all_finite());
}

TEST(ParamVector, LayoutChecks) {
  const ParamVector bare(std::vector<double>{1, 2});
  EXPECT_THROW(bare.network(), LayoutError);
  EXPECT_THROW(ParamVector(tiny_net(), std::vector<double>(3)), LayoutError);
  const auto a = init_params(tiny_net(3), 0);
  const auto b = init_params(tiny_net(4), 0);
  EXPECT_FALSE(a.same_layout(b));
  EXPECT_THROW(a.require_same_layout(b, "test"), LayoutError);
}

TEST(Forward, ZeroDropTrainEqualsEval) {
  const auto c = tiny_net();
  const auto p = init_params(c, 1);
  const Batch b = random_batch(c, 6, 2);
  EXPECT_EQ(forward(p, b, ForwardMode::training(0.0, 99)), forward(p, b, ForwardMode::eval()));
}

TEST(Forward, AllBlocksDroppedIsHeadOfEmbedding) {
  const auto c = tiny_net();
  const auto p = init_params(c, 1);
  ParamVector no_blocks = p;
  const auto l = p.layout();
  for (std::size_t k = 0; k < c.num_blocks; ++k) {
    for (const auto& s : {l.block_weight[k], l.block_bias[k]}) {
      for (std::size_t i = 0; i < s.size; ++i) no_blocks[s.offset + i] = 0.0;
    }
  }
  const Batch b = random_batch(c, 8, 4);
  const Logits dropped = forward(p, b, ForwardMode::training(std::nextafter(1.0, 0.0), 5));
  const Logits direct = forward(no_blocks, b, ForwardMode::eval());
  EXPECT_EQ(dropped, direct);
}

TEST(Forward, DeterministicInSeed) {
  const auto c = tiny_net();
  const auto p = init_params(c, 1);
  const Batch b = random_batch(c, 32, 4);
  const auto m = ForwardMode::training(0.5, 17);
  EXPECT_EQ(forward(p, b, m), forward(p, b, m));
  EXPECT_NE(forward(p, b, m), forward(p, b, ForwardMode::training(0.5, 18)));
}

TEST(Forward, MaskKeyedByExampleId) {
  // An example gets the same mask wherever it sits in the batch.
  const auto c = tiny_net();
  const auto p = init_params(c, 1);
  const Batch b = random_batch(c, 10, 4);
  Batch rev = b;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t j = b.size() - 1 - i;
    std::copy(b.inputs.row(j).begin(), b.inputs.row(j).end(), rev.inputs.row(i).begin());
    rev.labels[i] = b.labels[j];
    rev.ids[i] = b.ids[j];
  }
  const auto m = ForwardMode::training(0.5, 3);
  const Logits a = forward(p, b, m);
  const Logits r = forward(p, rev, m);
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t k = 0; k < c.num_classes; ++k) EXPECT_EQ(a(i, k), r(b.size() - 1 - i, k));
  }
}

TEST(Forward, DimensionMismatch) {
  const auto p = init_params(tiny_net(), 1);
  EXPECT_THROW(forward(p, Matrix(2, 5), ForwardMode::eval()), DimensionError);
}

TEST(BlockScale, InvertedScaling) {
  const auto m = ForwardMode::training(0.25, 1);
  int kept = 0;
  for (std::uint64_t key = 0; key < 4000; ++key) {
    const double s = block_scale(m, key, 0);
    ASSERT_TRUE(s == 0.0 || s == 1.0 / 0.75);
    kept += s != 0.0;
  }
  EXPECT_NEAR(kept / 4000.0, 0.75, 0.03);
  EXPECT_EQ(block_scale(ForwardMode::eval(), 5, 0), 1.0);
}

TEST(Softmax, RowsSumToOne) {
  Matrix z(3, 4);
  z(0, 0) = 1000;
  z(1, 2) = -1000;
  z(2, 3) = 3.5;
  const Matrix p = softmax(z);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (const double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Matrix z(2, 5);
  const std::vector<int> y{0, 3};
  EXPECT_NEAR(cross_entropy(z, y), std::log(5.0), 1e-15);
}

TEST(CrossEntropy, HandExample) {
  Matrix z(2, 2);
  z(1, 0) = std::log(3.0);
  const std::vector<int> y{0, 0};
  EXPECT_NEAR(cross_entropy(z, y), (std::log(2.0) + std::log(4.0 / 3.0)) / 2.0, 1e-15);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  double prev = INFINITY;
  for (const double margin : {1.0, 5.0, 20.0, 50.0}) {
    Matrix z(1, 3);
    z(0, 1) = margin;
    const double l = cross_entropy(z, std::vector<int>{1});
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Matrix z(1, 3);
  EXPECT_THROW(cross_entropy(z, std::vector<int>{3}), std::out_of_range);
  EXPECT_THROW(cross_entropy(z, std::vector<int>{-1}), std::out_of_range);
}

TEST(FiniteDifference, QuadraticIsExact) {
  const std::vector<double> target{1.0, -2.0, 0.5};
  auto f = [&](std::span<const double> th) {
    double s = 0;
    for (std::size_t i = 0; i < th.size(); ++i) s += (th[i] - target[i]) * (th[i] - target[i]);
    return s;
  };
  const std::vector<double> at{0.3, 0.7, -1.1};
  const auto g = finite_difference_gradient(f, at, 1e-5);
  for (std::size_t i = 0; i < at.size(); ++i) EXPECT_NEAR(g[i], 2.0 * (at[i] - target[i]), 1e-8);
}

TEST(FiniteDifference, LinearIsExact) {
  auto f = [](std::span<const double> th) { return 3.0 * th[0] - 2.0 * th[1]; };
  const auto g = finite_difference_gradient(f, std::vector<double>{0.1, 0.2}, 1e-5);
  EXPECT_NEAR(g[0], 3.0, 1e-8);
  EXPECT_NEAR(g[1], -2.0, 1e-8);
}

TEST(LossAndGrad, HeadBiasGradientIsSoftmaxMinusOneHot) {
  const auto c = tiny_net();
  const auto p = init_params(c, 2);
  const Batch b = random_batch(c, 7, 8);
  const auto lg = loss_and_grad(p, b, ForwardMode::eval());
  const Matrix prob = softmax(forward(p, b, ForwardMode::eval()));
  const auto l = p.layout();
  for (std::size_t k = 0; k < c.num_classes; ++k) {
    double expect = 0;
    for (std::size_t i = 0; i < b.size(); ++i) expect += prob(i, k) - (b.labels[i] == static_cast<int>(k));
    EXPECT_NEAR(lg.grad[l.head_bias.offset + k], expect / b.size(), 1e-14);
  }
  EXPECT_NEAR(lg.loss, cross_entropy(forward(p, b, ForwardMode::eval()), b.labels), 1e-14);
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto c = tiny_net();
    const auto p = init_params(c, seed);
    const Batch b = random_batch(c, 6, 100 + seed);
    const auto mode = ForwardMode::training(0.3, seed);
    const auto lg = loss_and_grad(p, b, mode);
    const auto fd = finite_difference_gradient(p, b, mode, 1e-5);
    EXPECT_LE(max_rel_error(lg.grad.values(), fd.values()), 1e-5) << seed;
  }
}

TEST(LossAndGrad, DuplicatedBatchSameGradient) {
  const auto c = tiny_net();
  const auto p = init_params(c, 4);
  const Batch b = random_batch(c, 5, 6);
  Batch twice;
  twice.inputs = Matrix(10, c.input_dim);
  for (std::size_t i = 0; i < 10; ++i) {
    std::copy(b.inputs.row(i % 5).begin(), b.inputs.row(i % 5).end(), twice.inputs.row(i).begin());
    twice.labels.push_back(b.labels[i % 5]);
    twice.ids.push_back(b.ids[i % 5]);
  }
  const auto mode = ForwardMode::training(0.2, 1);
  const auto a = loss_and_grad(p, b, mode);
  const auto d = loss_and_grad(p, twice, mode);
  EXPECT_TRUE(a.grad.bitwise_equal(d.grad));
  EXPECT_EQ(a.loss, d.loss);
}

TEST(LossAndGrad, BatchGradientIsMeanOfExampleGradients) {
  const auto c = tiny_net();
  const auto p = init_params(c, 4);
  const Batch b = random_batch(c, 6, 6);
  const auto mode = ForwardMode::training(0.2, 1);
  GradientSum parts(p.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    Matrix x(1, c.input_dim);
    std::copy(b.inputs.row(i).begin(), b.inputs.row(i).end(), x.row(0).begin());
    const std::vector<int> y{b.labels[i]};
    const std::vector<std::uint64_t> id{b.ids[i]};
    accumulate_loss_and_grad(p, x, id, LossTargets::hard(y), mode, parts);
  }
  const auto whole = loss_and_grad(p, b, mode);
  EXPECT_EQ(parts.mean_gradient(), std::vector<double>(whole.grad.values().begin(), whole.grad.values().end()));
}

TEST(LossAndGrad, RichardsonOrderTwo) {
  const auto c = tiny_net();
  const auto p = init_params(c, 9);
  const Batch b = random_batch(c, 4, 3);
  const auto lg = loss_and_grad(p, b, ForwardMode::eval());
  const auto coarse = finite_difference_gradient(p, b, ForwardMode::eval(), 1e-2);
  const auto fine = finite_difference_gradient(p, b, ForwardMode::eval(), 5e-3);
  int checked = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e1 = std::abs(coarse[i] - lg.grad[i]);
    const double e2 = std::abs(fine[i] - lg.grad[i]);
    if (e1 < 1e-9) continue;  // too small to measure the rate
    ++checked;
    EXPECT_GT(e1 / e2, 3.0) << i;
    EXPECT_LT(e1 / e2, 5.0) << i;
  }
  EXPECT_GT(checked, 10);
}

TEST(LossAndGrad, EmptyBatchRejected) {
  const auto p = init_params(tiny_net(), 1);
  Batch empty;
  empty.inputs = Matrix(0, 4);
  EXPECT_ANY_THROW(loss_and_grad(p, empty, ForwardMode::eval()));
}

}  // namespace
}  // namespace lofi
