// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lofi/errors.hpp"
#include "lofi/eval_stats.hpp"
#include "lofi/random.hpp"

namespace lofi {

void DiversityConfig::validate(std::size_t num_groups) const {
  if (!std::isfinite(lambda)) throw ConfigError("diversity.lambda", "must be finite");
  if (!(mix_alpha > 0.0)) throw ConfigError("diversity.mix_alpha", "must be > 0");
  if (pairing.size() != num_groups) {
    throw ConfigError("diversity.pairing", "needs one partner per group (" +
                                               std::to_string(num_groups) + ")");
  }
  for (std::size_t k = 0; k < pairing.size(); ++k) {
    const std::size_t p = pairing[k];
    if (p >= num_groups || p == k || pairing[p] != k) {
      throw ConfigError("diversity.pairing",
                        "must be an involution without fixed points (group " + std::to_string(k) + ")");
    }
  }
}

std::vector<std::size_t> DiversityConfig::adjacent_pairs(std::size_t num_groups) {
  if (num_groups % 2 != 0) throw ConfigError("diversity.pairing", "odd number of groups");
  std::vector<std::size_t> out(num_groups);
  for (std::size_t k = 0; k < num_groups; ++k) out[k] = k ^ 1u;
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
  double sp = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("kl_divergence: negative entry");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw std::invalid_argument("kl_divergence: inputs must sum to 1");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
  }
  return std::max(kl, 0.0);
}

double mean_kl(const Matrix& p, const Matrix& q) {
  if (p.rows != q.rows || p.cols != q.cols || p.rows == 0) {
    throw DimensionError("mean_kl: shape mismatch");
  }
  double s = 0.0;
  for (std::size_t r = 0; r < p.rows; ++r) s += kl_divergence(p.row(r), q.row(r));
  return s / static_cast<double>(p.rows);
}

MixedBatch mix_batches(const Batch& a, const Batch& b, double coeff) {
  if (a.size() != b.size() || a.inputs.cols != b.inputs.cols) {
    throw DimensionError("mix_batches: batches differ in size or width");
  }
  MixedBatch m;
  m.coeff = coeff;
  m.labels_a = a.labels;
  m.labels_b = b.labels;
  m.inputs = Matrix(a.inputs.rows, a.inputs.cols);
  for (std::size_t i = 0; i < m.inputs.data.size(); ++i) {
    m.inputs.data[i] = coeff * a.inputs.data[i] + (1.0 - coeff) * b.inputs.data[i];
  }
  m.ids.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::uint64_t ia = a.ids.empty() ? i : a.ids[i];
    const std::uint64_t ib = b.ids.empty() ? i : b.ids[i];
    m.ids[i] = derive_seed(ia, {ib});
  }
  return m;
}

MixedBatch mix_batches(const Batch& a, const Batch& b, double mix_alpha, std::uint64_t mix_seed) {
  Rng rng(derive_seed(mix_seed, {0x6d6978}));
  return mix_batches(a, b, rng.beta(mix_alpha, mix_alpha));
}

std::pair<double, double> paired_loss(double loss_a, double loss_b, const Matrix& y1,
                                      const Matrix& y2, double lambda) {
  if (lambda == 0.0) return {loss_a, loss_b};
  return {loss_a + lambda * mean_kl(y1, y2), loss_b + lambda * mean_kl(y2, y1)};
}

LossAndGrad paired_loss_and_grad(const ParamVector& params, const MixedBatch& batch,
                                 const Matrix& partner_probs, double lambda,
                                 const ForwardMode& mode) {
  LossTargets t = batch.targets();
  t.partner_probs = &partner_probs;
  t.kl_weight = lambda;
  GradientSum sum(params.size());
  accumulate_loss_and_grad(params, batch.inputs, batch.ids, t, mode, sum);
  return {sum.mean_loss(), ParamVector(params.network(), sum.mean_gradient())};
}

double prediction_disagreement(const ParamVector& a, const ParamVector& b, const Matrix& inputs) {
  const auto pa = predictions(forward(a, inputs, ForwardMode::eval()));
  const auto pb = predictions(forward(b, inputs, ForwardMode::eval()));
  if (pa.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) diff += pa[i] != pb[i] ? 1 : 0;
  return static_cast<double>(diff) / static_cast<double>(pa.size());
}

}  // namespace lofi
