// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/eval_stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lofi/errors.hpp"

namespace lofi {
namespace {

double brute_force_p(std::size_t n01, std::size_t n10) {
  const std::size_t n = n01 + n10;
  if (n == 0) return 1.0;
  const std::size_t k = std::max(n01, n10);
  double tail = 0;
  for (std::size_t i = k; i <= n; ++i) {
    double c = 1;
    for (std::size_t j = 0; j < i; ++j) c = c * static_cast<double>(n - j) / static_cast<double>(j + 1);
    tail += c * std::pow(0.5, static_cast<double>(n));
  }
  return std::min(1.0, 2.0 * tail);
}

TEST(Accuracy, Basics) {
  Matrix s(3, 2);
  s(0, 0) = 1;
  s(1, 1) = 1;
  s(2, 0) = 1;
  EXPECT_EQ(accuracy(s, std::vector<int>{0, 1, 0}), 1.0);
  EXPECT_EQ(accuracy(s, std::vector<int>{1, 0, 1}), 0.0);
}

TEST(Accuracy, TiesGoToLowestIndex) {
  Matrix s(1, 2);
  EXPECT_EQ(accuracy(s, std::vector<int>{0}), 1.0);
  EXPECT_EQ(accuracy(s, std::vector<int>{1}), 0.0);
}

TEST(Accuracy, ShapeMismatch) {
  EXPECT_THROW(accuracy(Matrix(2, 2), std::vector<int>{0}), DimensionError);
}

TEST(McNemar, TwelveDiscordant) {
  const auto r = mcnemar_exact({0, 10, 2, 0});
  EXPECT_NEAR(r.p_value, 158.0 / 4096.0, 1e-12);
  EXPECT_EQ(r.discordant, 12u);
}

TEST(McNemar, NoDiscordanceAndBalance) {
  EXPECT_EQ(mcnemar_exact({5, 0, 0, 7}).p_value, 1.0);
  EXPECT_EQ(mcnemar_exact({5, 4, 4, 7}).p_value, 1.0);
}

TEST(McNemar, MatchesBruteForce) {
  for (std::size_t a = 0; a <= 20; ++a) {
    for (std::size_t b = 0; a + b <= 20; ++b) {
      EXPECT_NEAR(mcnemar_exact({0, a, b, 0}).p_value, brute_force_p(a, b), 1e-12) << a << "," << b;
    }
  }
}

TEST(McNemar, SymmetricAndMonotone) {
  for (std::size_t n = 1; n <= 20; ++n) {
    double prev = 2.0;
    for (std::size_t a = (n + 1) / 2; a <= n; ++a) {
      const double p = mcnemar_exact({0, a, n - a, 0}).p_value;
      EXPECT_EQ(p, mcnemar_exact({0, n - a, a, 0}).p_value);
      EXPECT_LE(p, prev);
      prev = p;
    }
  }
}

TEST(McNemar, LargeCountsStayInRange) {
  const double p = mcnemar_exact({0, 2600, 2400, 0}).p_value;
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 0.01);
  EXPECT_EQ(mcnemar_exact({0, 3000, 3000, 0}).p_value, 1.0);
}

TEST(PairedOutcome, Tally) {
  const auto t = PairedOutcome::tally({true, true, false, false}, {true, false, true, false});
  EXPECT_EQ(t.n11, 1u);
  EXPECT_EQ(t.n10, 1u);
  EXPECT_EQ(t.n01, 1u);
  EXPECT_EQ(t.n00, 1u);
  EXPECT_EQ(t.total(), 4u);
}

TEST(Metrics, RoundTripExact) {
  const std::vector<MetricRecord> recs{{"r", 0, "merged", "test_id", "accuracy", 0.1 + 0.2},
                                       {"r", 3, "ensemble", "test_ood", "loss", 1.0 / 3.0},
                                       {"r", 1, "0", "train", "loss", 5e-324}};
  const auto path = std::filesystem::temp_directory_path() / "lofi_metrics_rt.csv";
  write_metrics(recs, path);
  const auto back = read_metrics(path);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].value, recs[i].value);
    EXPECT_EQ(back[i].worker_id, recs[i].worker_id);
    EXPECT_EQ(back[i].epoch, recs[i].epoch);
  }
  const std::string first = metrics_csv(recs);
  write_metrics(recs, path);
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), first);
  std::filesystem::remove(path);
}

TEST(Metrics, EmptyIsHeaderOnly) {
  EXPECT_EQ(metrics_csv({}), std::string(kMetricsHeader) + "\n");
  EXPECT_EQ(std::string(kMetricsHeader), "run_id,epoch,worker_id,split,metric,value");
}

TEST(Metrics, UnwritablePathNamesThePath) {
  try {
    write_metrics({}, "/proc/nonexistent/dir/m.csv");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/proc/nonexistent"), std::string::npos);
  }
}

}  // namespace
}  // namespace lofi
