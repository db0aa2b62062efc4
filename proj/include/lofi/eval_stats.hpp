// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lofi/tensor.hpp"

namespace lofi {

/// Argmax per row; ties go to the lowest class index.
std::vector<int> predictions(const Matrix& scores);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Matrix& scores, std::span<const int> labels);

std::vector<bool> correctness(const Matrix& scores, std::span<const int> labels);

/// Contingency counts for two classifiers on the same examples.
/// n01: A wrong and B right. n10: A right and B wrong.
struct PairedOutcome {
  std::size_t n00 = 0;
  std::size_t n01 = 0;
  std::size_t n10 = 0;
  std::size_t n11 = 0;

  std::size_t total() const noexcept { return n00 + n01 + n10 + n11; }

  static PairedOutcome tally(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b);
};

struct McNemarResult {
  double p_value = 1.0;
  std::size_t discordant = 0;
};

/// Exact two-sided McNemar test: binomial(n01 + n10, 1/2) tail, doubled and
/// capped at 1.
McNemarResult mcnemar_exact(const PairedOutcome& outcome);

/// One long-format metric row:
/// run_id, epoch, worker_id, split, metric, value.
/// worker_id is a worker index, "merged" or "ensemble"; split is one of
/// train, test_id, test_ood.
struct MetricRecord {
  std::string run_id;
  std::size_t epoch = 0;
  std::string worker_id;
  std::string split;
  std::string metric;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

inline constexpr const char* kMetricsHeader = "run_id,epoch,worker_id,split,metric,value";

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

std::string metrics_csv(std::span<const MetricRecord> records);
void write_metrics(std::span<const MetricRecord> records, const std::filesystem::path& path);
std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

}  // namespace lofi
