// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lofi {

/// Order-independent exact sum of IEEE doubles.
///
/// A fixed-point accumulator wide enough to hold any finite double (a
/// Kulisch-style long accumulator). Every `add` is exact, so the final value
/// does not depend on the order or grouping of the additions. This is what lets
/// a gradient reduced over n workers match, bit for bit, the gradient of one
/// worker that saw the whole batch.
class ExactAccumulator {
 public:
  ExactAccumulator() = default;

  void add(double x);
  void add(const ExactAccumulator& other);
  void clear() noexcept;

  /// Sum rounded to nearest double (ties to even).
  double value() const;

  /// value / count, with one exact residual correction. Returns `x` exactly
  /// when the accumulator holds `count` copies of `x`.
  double mean(double count) const;

  bool empty() const noexcept { return lo_ > hi_; }

 private:
  // Limb i has weight 2^(32 i + kBaseExponent) and holds a signed 64-bit value
  // whose low 32 bits are the digit; the spare bits absorb carries lazily.
  static constexpr int kLimbs = 67;
  static constexpr int kBaseExponent = -1088;
  static constexpr std::uint32_t kNormalizeEvery = 1u << 30;

  void normalize() noexcept;

  std::array<std::int64_t, kLimbs> limbs_{};
  int lo_ = kLimbs;
  int hi_ = -1;
  std::uint32_t pending_ = 0;
};

/// One ExactAccumulator per coordinate of a vector.
class ExactVectorSum {
 public:
  ExactVectorSum() = default;
  explicit ExactVectorSum(std::size_t size) : acc_(size) {}

  std::size_t size() const noexcept { return acc_.size(); }

  void add(std::size_t index, double x) { acc_[index].add(x); }
  void add(std::span<const double> values);
  void add(const ExactVectorSum& other);
  void clear() noexcept;

  std::vector<double> values() const;
  std::vector<double> mean(double count) const;

 private:
  std::vector<ExactAccumulator> acc_;
};

/// Elementwise mean of equal-length vectors through exact accumulation.
/// Throws LayoutError on a length mismatch or empty input.
std::vector<double> exact_mean(std::span<const std::span<const double>> inputs);

}  // namespace lofi
