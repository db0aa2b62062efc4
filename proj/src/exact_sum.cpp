// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/exact_sum.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "lofi/errors.hpp"

namespace lofi {

namespace {

using u128 = unsigned __int128;

constexpr std::int64_t kDigitMask = 0xffffffffLL;

int bit_length(u128 v) {
  const auto high = static_cast<std::uint64_t>(v >> 64);
  if (high != 0) return 128 - std::countl_zero(high);
  return 64 - std::countl_zero(static_cast<std::uint64_t>(v));
}

}  // namespace

void ExactAccumulator::add(double x) {
  if (x == 0.0) return;
  const auto bits = std::bit_cast<std::uint64_t>(x);
  const bool negative = (bits >> 63) != 0;
  const int biased = static_cast<int>((bits >> 52) & 0x7ff);
  if (biased == 0x7ff) {
    throw NumericalError("ExactAccumulator: non-finite input");
  }
  std::uint64_t mantissa = bits & ((std::uint64_t{1} << 52) - 1);
  int exponent = -1074;
  if (biased != 0) {
    mantissa |= std::uint64_t{1} << 52;
    exponent = biased - 1075;
  }
  const int position = exponent - kBaseExponent;
  const int limb = position >> 5;
  const u128 shifted = static_cast<u128>(mantissa) << (position & 31);
  const std::int64_t digits[3] = {
      static_cast<std::int64_t>(shifted & kDigitMask),
      static_cast<std::int64_t>((shifted >> 32) & kDigitMask),
      static_cast<std::int64_t>(shifted >> 64)};
  for (int k = 0; k < 3; ++k) {
    if (negative) {
      limbs_[limb + k] -= digits[k];
    } else {
      limbs_[limb + k] += digits[k];
    }
  }
  lo_ = std::min(lo_, limb);
  hi_ = std::max(hi_, limb + 2);
  if (++pending_ >= kNormalizeEvery) normalize();
}

void ExactAccumulator::add(const ExactAccumulator& other) {
  if (other.empty()) return;
  if (pending_ + other.pending_ + 1 >= kNormalizeEvery) normalize();
  for (int i = other.lo_; i <= other.hi_; ++i) limbs_[i] += other.limbs_[i];
  lo_ = std::min(lo_, other.lo_);
  hi_ = std::max(hi_, other.hi_);
  pending_ += other.pending_ + 1;
  if (pending_ >= kNormalizeEvery) normalize();
}

void ExactAccumulator::clear() noexcept {
  for (int i = lo_; i <= hi_; ++i) limbs_[i] = 0;
  lo_ = kLimbs;
  hi_ = -1;
  pending_ = 0;
}

void ExactAccumulator::normalize() noexcept {
  if (empty()) return;
  for (int i = lo_; i < kLimbs - 1; ++i) {
    const std::int64_t carry = limbs_[i] >> 32;
    if (carry == 0 && i >= hi_) break;
    limbs_[i] -= carry << 32;
    limbs_[i + 1] += carry;
    hi_ = std::max(hi_, i + 1);
  }
  pending_ = 0;
}

double ExactAccumulator::value() const {
  if (empty()) return 0.0;

  // Fully carried digits in [0, 2^32); the leftover carry is the sign.
  std::array<std::int64_t, kLimbs> d{};
  std::int64_t carry = 0;
  for (int i = lo_; i < kLimbs; ++i) {
    const std::int64_t x = limbs_[i] + carry;
    carry = x >> 32;
    d[i] = x - (carry << 32);
    if (i >= hi_ && carry == 0) break;
  }
  const bool negative = carry < 0;
  if (negative) {
    // Two's complement negation across the digit string.
    std::int64_t c = 1;
    for (int i = 0; i < kLimbs; ++i) {
      const std::int64_t x = (kDigitMask - d[i]) + c;
      d[i] = x & kDigitMask;
      c = x >> 32;
    }
  }

  int top = kLimbs - 1;
  while (top >= 0 && d[top] == 0) --top;
  if (top < 0) return 0.0;
  top = std::max(top, 2);

  const u128 head = (static_cast<u128>(d[top]) << 64) |
                    (static_cast<u128>(d[top - 1]) << 32) |
                    static_cast<u128>(d[top - 2]);
  bool sticky = false;
  for (int i = top - 3; i >= 0 && !sticky; --i) sticky = d[i] != 0;
  const int exponent = 32 * (top - 2) + kBaseExponent;

  const int bits = bit_length(head);
  double magnitude = 0.0;
  if (bits <= 53) {
    magnitude = std::ldexp(static_cast<double>(static_cast<std::uint64_t>(head)), exponent);
  } else {
    const int shift = bits - 53;
    auto q = static_cast<std::uint64_t>(head >> shift);
    const u128 rem = head & ((u128{1} << shift) - 1);
    const u128 half = u128{1} << (shift - 1);
    if (rem > half || (rem == half && (sticky || (q & 1) != 0))) ++q;
    magnitude = std::ldexp(static_cast<double>(q), exponent + shift);
  }
  return negative ? -magnitude : magnitude;
}

double ExactAccumulator::mean(double count) const {
  const double q = value() / count;
  if (!std::isfinite(q) || q == 0.0) return q;
  ExactAccumulator residual = *this;
  const double product = count * q;
  residual.add(-product);
  residual.add(-std::fma(count, q, -product));
  return q + residual.value() / count;
}

void ExactVectorSum::add(std::span<const double> values) {
  if (values.size() != acc_.size()) {
    throw LayoutError("ExactVectorSum: length " + std::to_string(values.size()) +
                      " does not match " + std::to_string(acc_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) acc_[i].add(values[i]);
}

void ExactVectorSum::add(const ExactVectorSum& other) {
  if (other.size() != size()) {
    throw LayoutError("ExactVectorSum: merging sums of different length");
  }
  for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i].add(other.acc_[i]);
}

void ExactVectorSum::clear() noexcept {
  for (auto& a : acc_) a.clear();
}

std::vector<double> ExactVectorSum::values() const {
  std::vector<double> out(acc_.size());
  for (std::size_t i = 0; i < acc_.size(); ++i) out[i] = acc_[i].value();
  return out;
}

std::vector<double> ExactVectorSum::mean(double count) const {
  std::vector<double> out(acc_.size());
  for (std::size_t i = 0; i < acc_.size(); ++i) out[i] = acc_[i].mean(count);
  return out;
}

std::vector<double> exact_mean(std::span<const std::span<const double>> inputs) {
  if (inputs.empty()) throw LayoutError("exact_mean: empty input list");
  ExactVectorSum sum(inputs.front().size());
  for (const auto& v : inputs) sum.add(v);
  return sum.mean(static_cast<double>(inputs.size()));
}

}  // namespace lofi
