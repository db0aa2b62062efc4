// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lofi/data.hpp"
#include "lofi/nn.hpp"

namespace lofi {

/// Elementwise mean of parameter vectors that share a layout. The sum is exact,
/// so the result does not depend on the order of `params`.
ParamVector uniform_average(std::span<const ParamVector> params);

/// Exponential moving average of weights.
///
/// `accum` follows accum <- decay*accum + (1-decay)*params from a zero start.
/// `debiased` tracks accum / (1 - decay^steps) directly as a running weighted
/// mean, d <- d + (params - d) * (1-decay)/(1-decay^steps), which equals the
/// quotient algebraically and reproduces a constant stream exactly.
struct EmaState {
  double decay = 0.999;
  ParamVector accum;
  ParamVector debiased;
  double decay_power = 1.0;  // decay^steps
  std::size_t steps = 0;

  static EmaState start(double decay, const ParamVector& like);
};

EmaState ema_update(EmaState state, const ParamVector& params);

/// Bias-corrected average; throws std::logic_error before the first update.
ParamVector ema_debias(const EmaState& state);

/// Mixing weight clamped to [0, 1].
class InterpolationCoefficient {
 public:
  explicit InterpolationCoefficient(double alpha);
  double value() const noexcept { return alpha_; }

 private:
  double alpha_;
};

/// (1 - alpha) * a + alpha * b, per coordinate.
ParamVector interpolate(const ParamVector& a, const ParamVector& b, double alpha);

/// WiSE-FT: interpolation from the initial weights toward the fine-tuned ones.
ParamVector wise_ft(const ParamVector& theta_init, const ParamVector& theta_ft,
                    InterpolationCoefficient alpha);

/// Mean of the per-model softmax probabilities.
Matrix ensemble_predict(std::span<const ParamVector> params, const Matrix& inputs);

struct ScanPoint {
  double alpha = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct BarrierScan {
  std::vector<ScanPoint> points;
  /// max over the path of loss minus the larger endpoint loss.
  double barrier = 0.0;
};

double loss_barrier(std::span<const ScanPoint> points);

using PointEvaluator = std::function<ScanPoint(const ParamVector&)>;

/// Evaluates the straight path from a to b at alpha = j/(m-1), j = 0..m-1.
BarrierScan barrier_scan(const ParamVector& a, const ParamVector& b, std::size_t num_points,
                         const PointEvaluator& evaluate);
BarrierScan barrier_scan(const ParamVector& a, const ParamVector& b, std::size_t num_points,
                         const Dataset& eval_set);

/// Eval-mode loss and accuracy of one model on a dataset.
ScanPoint evaluate(const ParamVector& params, const Dataset& data);

struct ProbeConfig {
  std::size_t steps = 300;
  double lr = 0.5;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Trains only the head (softmax regression on frozen eval-mode features);
/// every body parameter is returned bit-for-bit unchanged.
ParamVector linear_probe(const ParamVector& theta_pre, const Dataset& data,
                         const ProbeConfig& config);

enum class HeadInit { MappedHead, LinearProbe, ZeroInit };

/// Copies the body of `pretrained` into a network with `target`'s head size.
/// MappedHead takes head row c from pretrained row class_map[c]; ZeroInit and
/// LinearProbe start from a zero head (LinearProbe then probes on `probe_data`).
ParamVector adapt_head(const ParamVector& pretrained, const NetworkConfig& target, HeadInit init,
                       std::span<const int> class_map, const Dataset& probe_data,
                       const ProbeConfig& probe);

}  // namespace lofi
