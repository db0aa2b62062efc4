// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/exact_sum.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lofi/errors.hpp"
#include "lofi/random.hpp"

namespace lofi {
namespace {

TEST(ExactAccumulator, EmptyIsZero) {
  ExactAccumulator acc;
  EXPECT_TRUE(acc.empty());
  EXPECT_EQ(acc.value(), 0.0);
}

TEST(ExactAccumulator, CancellationIsExact) {
  ExactAccumulator acc;
  acc.add(1e100);
  acc.add(1.0);
  acc.add(-1e100);
  EXPECT_EQ(acc.value(), 1.0);
}

TEST(ExactAccumulator, OrderDoesNotMatter) {
  Rng rng(7);
  std::vector<double> xs;
  for (int i = 0; i < 500; ++i) xs.push_back(rng.normal() * std::pow(10.0, rng.index(30)) - 1e10);
  ExactAccumulator forward;
  for (const double x : xs) forward.add(x);
  std::reverse(xs.begin(), xs.end());
  ExactAccumulator backward;
  for (const double x : xs) backward.add(x);
  EXPECT_EQ(forward.value(), backward.value());
}

TEST(ExactAccumulator, MergeEqualsSequential) {
  Rng rng(3);
  ExactAccumulator all;
  ExactAccumulator a;
  ExactAccumulator b;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.normal();
    all.add(x);
    (i % 3 == 0 ? a : b).add(x);
  }
  a.add(b);
  EXPECT_EQ(a.value(), all.value());
}

TEST(ExactAccumulator, MeanOfCopiesIsExact) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = rng.normal() * 1e3;
    const int n = 1 + static_cast<int>(rng.index(97));
    ExactAccumulator acc;
    for (int i = 0; i < n; ++i) acc.add(x);
    EXPECT_EQ(acc.mean(n), x) << n;
  }
}

TEST(ExactAccumulator, SubnormalsAndExtremes) {
  ExactAccumulator acc;
  const double tiny = std::numeric_limits<double>::denorm_min();
  acc.add(tiny);
  acc.add(tiny);
  EXPECT_EQ(acc.value(), 2 * tiny);
  ExactAccumulator big;
  big.add(std::numeric_limits<double>::max());
  big.add(-std::numeric_limits<double>::max());
  EXPECT_EQ(big.value(), 0.0);
}

TEST(ExactAccumulator, RejectsNonFinite) {
  ExactAccumulator acc;
  EXPECT_THROW(acc.add(std::nan("")), NumericalError);
  EXPECT_THROW(acc.add(INFINITY), NumericalError);
}

TEST(ExactAccumulator, RoundsToNearest) {
  // 1 + 2^-53 is a tie between 1 and 1 + 2^-52; ties go to even.
  ExactAccumulator acc;
  acc.add(1.0);
  acc.add(0x1.0p-53);
  EXPECT_EQ(acc.value(), 1.0);
  acc.add(0x1.0p-80);
  EXPECT_EQ(acc.value(), 1.0 + 0x1.0p-52);
}

TEST(ExactMean, Elementwise) {
  const std::vector<double> a{1, 3};
  const std::vector<double> b{3, 5};
  const std::vector<std::span<const double>> in{a, b};
  EXPECT_EQ(exact_mean(in), (std::vector<double>{2, 4}));
}

TEST(ExactMean, RejectsMismatch) {
  const std::vector<double> a{1, 3};
  const std::vector<double> b{3};
  const std::vector<std::span<const double>> in{a, b};
  EXPECT_THROW(exact_mean(in), LayoutError);
  EXPECT_THROW(exact_mean({}), LayoutError);
}

}  // namespace
}  // namespace lofi
