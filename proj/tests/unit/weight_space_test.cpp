// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/weight_space.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lofi/errors.hpp"
#include "lofi/eval_stats.hpp"
#include "test_util.hpp"

namespace lofi {
namespace {

ParamVector vec(std::vector<double> v) { return ParamVector(std::move(v)); }

TEST(UniformAverage, Examples) {
  const std::vector<ParamVector> ps{vec({1, 3}), vec({3, 5})};
  const ParamVector avg = uniform_average(ps);
  EXPECT_EQ(avg[0], 2.0);
  EXPECT_EQ(avg[1], 4.0);
  EXPECT_EQ(avg.size(), 2u);
  const auto p = init_params(testing::tiny_net(), 2);
  const std::vector<ParamVector> same(5, p);
  EXPECT_TRUE(uniform_average(same).bitwise_equal(p));
}

TEST(UniformAverage, AverageOfAveragesAndPermutation) {
  const auto c = testing::tiny_net();
  std::vector<ParamVector> ps;
  for (int i = 0; i < 6; ++i) ps.push_back(init_params(c, i));
  const auto all = uniform_average(ps);
  const auto a = uniform_average(std::span(ps).subspan(0, 3));
  const auto b = uniform_average(std::span(ps).subspan(3, 3));
  const std::vector<ParamVector> halves{a, b};
  const auto nested = uniform_average(halves);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_NEAR(nested[i], all[i], 1e-15);
  std::vector<ParamVector> shuffled{ps[4], ps[1], ps[5], ps[0], ps[3], ps[2]};
  EXPECT_TRUE(uniform_average(shuffled).bitwise_equal(all));
}

TEST(UniformAverage, LayoutMismatch) {
  const std::vector<ParamVector> ps{init_params(testing::tiny_net(3), 0), init_params(testing::tiny_net(4), 0)};
  EXPECT_THROW(uniform_average(ps), LayoutError);
  EXPECT_THROW(uniform_average({}), LayoutError);
}

TEST(Ema, ScalarExample) {
  EmaState s = EmaState::start(0.9, vec({0}));
  s = ema_update(s, vec({1}));
  s = ema_update(s, vec({2}));
  EXPECT_NEAR(s.accum[0], 0.29, 1e-12);
  EXPECT_NEAR(ema_debias(s)[0], 0.29 / 0.19, 1e-12);
  EXPECT_NEAR(ema_debias(s)[0], 1.526315789473684, 1e-12);
}

TEST(Ema, FirstStepIsExact) {
  const auto p = init_params(testing::tiny_net(), 1);
  EmaState s = EmaState::start(0.999, p);
  s = ema_update(s, p);
  EXPECT_TRUE(ema_debias(s).bitwise_equal(p));
}

TEST(Ema, ConstantStreamExactEveryStep) {
  for (const double beta : {0.1, 0.5, 0.9, 0.99, 0.999, 0.9999}) {
    const auto p = init_params(testing::tiny_net(), 7);
    EmaState s = EmaState::start(beta, p);
    double prev_gap = INFINITY;
    for (int t = 0; t < 300; ++t) {
      s = ema_update(s, p);
      ASSERT_TRUE(ema_debias(s).bitwise_equal(p)) << beta << " " << t;
      const double gap = std::abs(s.accum[0] - p[0]);
      ASSERT_LE(gap, prev_gap);
      prev_gap = gap;
    }
  }
}

TEST(Ema, TinyDecayTracksLatest) {
  EmaState s = EmaState::start(1e-12, vec({0}));
  s = ema_update(s, vec({3}));
  s = ema_update(s, vec({-5}));
  EXPECT_NEAR(s.accum[0], -5.0, 1e-10);
}

TEST(Ema, Errors) {
  EXPECT_THROW(ema_debias(EmaState::start(0.5, vec({1}))), std::logic_error);
  EXPECT_THROW(EmaState::start(1.0, vec({1})), ConfigError);
  EXPECT_THROW(ema_update(EmaState::start(0.5, vec({1})), vec({1, 2})), LayoutError);
}

TEST(WiseFt, Endpoints) {
  const auto a = init_params(testing::tiny_net(), 1);
  const auto b = init_params(testing::tiny_net(), 2);
  EXPECT_TRUE(wise_ft(a, b, InterpolationCoefficient(0.0)).bitwise_equal(a));
  EXPECT_TRUE(wise_ft(a, b, InterpolationCoefficient(1.0)).bitwise_equal(b));
  const auto mid = wise_ft(vec({0, 2}), vec({2, 4}), InterpolationCoefficient(0.5));
  EXPECT_EQ(mid[0], 1.0);
  EXPECT_EQ(mid[1], 3.0);
}

TEST(InterpolationCoefficient, Clamps) {
  EXPECT_EQ(InterpolationCoefficient(-0.5).value(), 0.0);
  EXPECT_EQ(InterpolationCoefficient(1.5).value(), 1.0);
  EXPECT_THROW(InterpolationCoefficient(std::nan("")), std::invalid_argument);
}

TEST(Ensemble, SingleAndIdentical) {
  const auto c = testing::tiny_net();
  const auto p = init_params(c, 3);
  const Batch b = testing::random_batch(c, 9, 1);
  const std::vector<ParamVector> one{p};
  const Matrix own = softmax(forward(p, b.inputs, ForwardMode::eval()));
  EXPECT_EQ(ensemble_predict(one, b.inputs), own);
  const std::vector<ParamVector> three(3, p);
  EXPECT_EQ(ensemble_predict(three, b.inputs), own);
}

TEST(Ensemble, ArgmaxMatchesBruteForce) {
  const auto c = testing::tiny_net(3);
  const std::vector<ParamVector> ps{init_params(c, 1), init_params(c, 2)};
  const Batch b = testing::random_batch(c, 200, 5);
  const Matrix e = ensemble_predict(ps, b.inputs);
  const Matrix p0 = softmax(forward(ps[0], b.inputs, ForwardMode::eval()));
  const Matrix p1 = softmax(forward(ps[1], b.inputs, ForwardMode::eval()));
  const auto a0 = predictions(p0);
  const auto a1 = predictions(p1);
  int disagreements = 0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    disagreements += a0[r] != a1[r];
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (p0(r, k) + p1(r, k) > p0(r, best) + p1(r, best)) best = k;
    }
    EXPECT_EQ(predictions(e)[r], best);
    double s = 0;
    for (const double v : e.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_GT(disagreements, 0);
}

TEST(Ensemble, AverageConvergesToEnsembleAsModelsMerge) {
  const auto c = testing::tiny_net();
  const auto base = init_params(c, 1);
  const auto dir = init_params(c, 2);
  const Batch b = testing::random_batch(c, 100, 9);
  double prev = INFINITY;
  for (const double eps : {0.3, 0.1, 0.03, 0.01, 0.003}) {
    const ParamVector plus = interpolate(base, dir, eps);
    const ParamVector minus = interpolate(base, dir, -eps);
    const std::vector<ParamVector> pair{plus, minus};
    const double avg_loss = cross_entropy(forward(uniform_average(pair), b.inputs, ForwardMode::eval()), b.labels);
    const Matrix ens = ensemble_predict(pair, b.inputs);
    double ens_loss = 0;
    for (std::size_t r = 0; r < b.size(); ++r) ens_loss -= std::log(ens(r, b.labels[r]));
    ens_loss /= b.size();
    const double gap = std::abs(avg_loss - ens_loss);
    EXPECT_LT(gap, prev) << eps;
    prev = gap;
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(BarrierScan, IdenticalEndpoints) {
  const TaskBundle t = generate_task(testing::small_task());
  const auto p = init_params(testing::small_net(t.spec), 1);
  const auto scan = barrier_scan(p, p, 11, t.test_id);
  ASSERT_EQ(scan.points.size(), 11u);
  for (const auto& pt : scan.points) EXPECT_EQ(pt.loss, scan.points.front().loss);
  EXPECT_EQ(scan.barrier, 0.0);
}

TEST(BarrierScan, EndpointsMatchDirectEvaluation) {
  const TaskBundle t = generate_task(testing::small_task());
  const auto a = init_params(testing::small_net(t.spec), 1);
  const auto b = init_params(testing::small_net(t.spec), 2);
  const auto scan = barrier_scan(a, b, 5, t.test_id);
  EXPECT_EQ(scan.points.front().loss, evaluate(a, t.test_id).loss);
  EXPECT_EQ(scan.points.back().loss, evaluate(b, t.test_id).loss);
  EXPECT_EQ(scan.points.back().accuracy, evaluate(b, t.test_id).accuracy);
  EXPECT_EQ(scan.points[2].alpha, 0.5);
  EXPECT_THROW(barrier_scan(a, b, 1, t.test_id), std::invalid_argument);
}

TEST(BarrierScan, ConvexLossHasNoBarrier) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(3);
    std::vector<double> y(3);
    for (auto& v : x) v = rng.normal() * 3;
    for (auto& v : y) v = rng.normal() * 3;
    auto quad = [](const ParamVector& p) {
      double s = 0;
      for (const double v : p.values()) s += (v - 1) * (v - 1);
      return ScanPoint{0, s, 0};
    };
    EXPECT_LE(barrier_scan(vec(x), vec(y), 21, quad).barrier, 1e-12);
  }
}

TEST(LossBarrier, Definition) {
  const std::vector<ScanPoint> pts{{0, 1.0, 0}, {0.5, 3.0, 0}, {1, 2.0, 0}};
  EXPECT_EQ(loss_barrier(pts), 1.0);
}

TEST(LinearProbe, ZeroStepsIsIdentity) {
  const TaskBundle t = generate_task(testing::small_task());
  const auto p = init_params(testing::small_net(t.spec), 3, true);
  ProbeConfig cfg;
  cfg.steps = 0;
  EXPECT_TRUE(linear_probe(p, t.finetune_train, cfg).bitwise_equal(p));
}

TEST(LinearProbe, FreezesBodyAndDescends) {
  const TaskBundle t = generate_task(testing::small_task());
  const auto p = init_params(testing::small_net(t.spec), 3, true);
  ProbeConfig cfg;
  cfg.steps = 100;
  const auto q = linear_probe(p, t.finetune_train, cfg);
  const std::size_t head = p.layout().head_offset();
  for (std::size_t i = 0; i < head; ++i) ASSERT_EQ(std::bit_cast<std::uint64_t>(q[i]), std::bit_cast<std::uint64_t>(p[i]));
  EXPECT_LT(evaluate(q, t.finetune_train).loss, evaluate(p, t.finetune_train).loss);
}

TEST(AdaptHead, MappedHeadCopiesRows) {
  const TaskBundle t = generate_task(testing::small_task());
  NetworkConfig src = testing::small_net(t.spec);
  src.num_classes = 2 * t.spec.num_classes;
  const auto pre = init_params(src, 5);
  const NetworkConfig dst = testing::small_net(t.spec);
  const auto out = adapt_head(pre, dst, HeadInit::MappedHead, t.class_map, t.finetune_train, {});
  const auto ls = pre.layout();
  const auto ld = out.layout();
  for (std::size_t i = 0; i < ld.head_offset(); ++i) EXPECT_EQ(out[i], pre[i]);
  for (std::size_t c = 0; c < dst.num_classes; ++c) {
    const std::size_t from = static_cast<std::size_t>(t.class_map[c]);
    for (std::size_t h = 0; h < dst.hidden_dim; ++h) {
      EXPECT_EQ(out[ld.head_weight.offset + c * dst.hidden_dim + h], pre[ls.head_weight.offset + from * dst.hidden_dim + h]);
    }
    EXPECT_EQ(out[ld.head_bias.offset + c], pre[ls.head_bias.offset + from]);
  }
  const auto zero = adapt_head(pre, dst, HeadInit::ZeroInit, t.class_map, t.finetune_train, {});
  for (std::size_t i = ld.head_offset(); i < ld.total; ++i) EXPECT_EQ(zero[i], 0.0);
}

}  // namespace
}  // namespace lofi
