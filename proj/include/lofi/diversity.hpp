// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "lofi/nn.hpp"
#include "lofi/tensor.hpp"

namespace lofi {

/// Paired-worker regularization. Partners train on the same mixed batch and add
/// lambda * KL(own || partner) to their loss; lambda > 0 pulls predictions
/// together (co-distillation), lambda < 0 pushes them apart. Partners exchange
/// predictions every step, so this reintroduces per-step communication.
struct DiversityConfig {
  double lambda = 0.0;
  /// pairing[k] is the partner of group k; must be an involution without fixed points.
  std::vector<std::size_t> pairing;
  /// Mixing coefficients are drawn from Beta(mix_alpha, mix_alpha).
  double mix_alpha = 1.0;

  void validate(std::size_t num_groups) const;

  /// 0<->1, 2<->3, ...; requires an even count.
  static std::vector<std::size_t> adjacent_pairs(std::size_t num_groups);
};

inline constexpr double kKlFloor = 1e-12;

/// sum_i p_i ln(p_i / max(q_i, 1e-12)), with 0 ln 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Row-mean of kl_divergence over two probability matrices.
double mean_kl(const Matrix& p, const Matrix& q);

/// coeff * a + (1 - coeff) * b, with both label sets kept for the mixed loss.
struct MixedBatch {
  Matrix inputs;
  std::vector<int> labels_a;
  std::vector<int> labels_b;
  double coeff = 1.0;
  std::vector<std::uint64_t> ids;

  LossTargets targets() const {
    LossTargets t = LossTargets::hard(labels_a);
    t.mix_labels = labels_b;
    t.mix_coeff = coeff;
    return t;
  }
};

MixedBatch mix_batches(const Batch& a, const Batch& b, double coeff);
MixedBatch mix_batches(const Batch& a, const Batch& b, double mix_alpha, std::uint64_t mix_seed);

/// (loss_a + lambda*KL(y1||y2), loss_b + lambda*KL(y2||y1)). Each KL treats
/// the partner's predictions as constants.
std::pair<double, double> paired_loss(double loss_a, double loss_b, const Matrix& y1,
                                      const Matrix& y2, double lambda);

/// Gradient of loss_a + lambda*KL(y_a || stopgrad(y_b)) with respect to the
/// parameters of model a only, where y_b = softmax(partner logits).
LossAndGrad paired_loss_and_grad(const ParamVector& params, const MixedBatch& batch,
                                 const Matrix& partner_probs, double lambda,
                                 const ForwardMode& mode);

/// Fraction of rows where the two models' argmax predictions differ.
double prediction_disagreement(const ParamVector& a, const ParamVector& b, const Matrix& inputs);

}  // namespace lofi
