// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lofi {

/// Dense row-major matrix of doubles. Rows are examples.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// A set of labelled examples. `ids` are stable example keys (indices into the
/// source dataset); they seed per-example randomness such as stochastic depth,
/// so the same example behaves identically whichever worker processes it.
struct Batch {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const noexcept { return labels.size(); }
  bool operator==(const Batch&) const = default;
};

}  // namespace lofi
