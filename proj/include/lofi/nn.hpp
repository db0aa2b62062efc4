// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lofi/exact_sum.hpp"
#include "lofi/tensor.hpp"

namespace lofi {

/// Residual MLP: tanh embedding, `num_blocks` residual tanh blocks with
/// stochastic depth, then a linear classification head.
struct NetworkConfig {
  std::size_t input_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t num_blocks = 2;
  std::size_t num_classes = 10;
  double drop_prob = 0.0;

  void validate() const;
  std::size_t param_count() const;

  /// Same parameter layout; drop_prob does not affect the layout.
  bool same_shape(const NetworkConfig& other) const noexcept {
    return input_dim == other.input_dim && hidden_dim == other.hidden_dim &&
           num_blocks == other.num_blocks && num_classes == other.num_classes;
  }
  bool operator==(const NetworkConfig&) const = default;
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named segments of a flat parameter vector, in storage order:
/// embed.weight, embed.bias, block{i}.weight, block{i}.bias, head.weight,
/// head.bias. Weights are stored row-major as [out][in].
struct ParamLayout {
  Segment embed_weight;
  Segment embed_bias;
  std::vector<Segment> block_weight;
  std::vector<Segment> block_bias;
  Segment head_weight;
  Segment head_bias;
  std::size_t total = 0;

  static ParamLayout of(const NetworkConfig& config);
  std::vector<Segment> segments() const;

  /// [head_weight.offset, total): everything a linear probe may touch.
  std::size_t head_offset() const noexcept { return head_weight.offset; }
};

/// Flat model parameters. Either tied to a NetworkConfig (layout known) or a
/// bare vector (for weight-space arithmetic on arbitrary vectors).
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(const NetworkConfig& config, std::vector<double> values);

  static ParamVector zeros_like(const ParamVector& other);

  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  const std::optional<NetworkConfig>& config() const noexcept { return config_; }
  const NetworkConfig& network() const;  // throws LayoutError for a bare vector
  ParamLayout layout() const { return ParamLayout::of(network()); }

  bool same_layout(const ParamVector& other) const noexcept;
  void require_same_layout(const ParamVector& other, std::string_view context) const;
  bool all_finite() const noexcept;

  /// Bitwise equality of values (distinguishes -0.0 and NaN payloads) plus layout.
  bool bitwise_equal(const ParamVector& other) const noexcept;

 private:
  std::optional<NetworkConfig> config_;
  std::vector<double> values_;
};

/// Eval runs every block at unit scale. Train drops each residual block per
/// example with probability `drop_prob` and scales survivors by 1/(1-p).
struct ForwardMode {
  bool train = false;
  double drop_prob = 0.0;
  std::uint64_t seed = 0;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(double drop_prob, std::uint64_t seed) {
    return {true, drop_prob, seed};
  }
};

/// Residual multiplier of `block` for the example keyed `example_key`.
double block_scale(const ForwardMode& mode, std::uint64_t example_key, std::size_t block);

using Logits = Matrix;

ParamVector init_params(const NetworkConfig& config, std::uint64_t seed, bool zero_head = false);

/// `ids` key per-example stochastic depth; row indices are used when empty.
Logits forward(const ParamVector& params, const Matrix& inputs, const ForwardMode& mode,
               std::span<const std::uint64_t> ids = {});
Logits forward(const ParamVector& params, const Batch& batch, const ForwardMode& mode);

/// Eval-mode activations entering the head (the "body" output).
Matrix features(const ParamVector& params, const Matrix& inputs);

Matrix softmax(const Logits& logits);
double cross_entropy(const Logits& logits, std::span<const int> labels);

/// Per-example objective: coeff*CE(labels) + (1-coeff)*CE(mix_labels)
/// + kl_weight * KL(p || partner), with the partner held constant.
struct LossTargets {
  std::span<const int> labels;
  std::span<const int> mix_labels;
  double mix_coeff = 1.0;
  const Matrix* partner_probs = nullptr;
  double kl_weight = 0.0;

  static LossTargets hard(std::span<const int> labels) {
    LossTargets t;
    t.labels = labels;
    return t;
  }
};

/// Exact running sums of per-example losses and gradients. Merging sums from
/// disjoint example sets is exact, so the mean does not depend on how the
/// examples were split across workers.
struct GradientSum {
  ExactVectorSum grad;
  ExactAccumulator loss;
  std::size_t count = 0;

  GradientSum() = default;
  explicit GradientSum(std::size_t param_count) : grad(param_count) {}

  void merge(const GradientSum& other);
  void clear() noexcept;
  double mean_loss() const;
  std::vector<double> mean_gradient() const;
};

void accumulate_loss_and_grad(const ParamVector& params, const Matrix& inputs,
                              std::span<const std::uint64_t> ids, const LossTargets& targets,
                              const ForwardMode& mode, GradientSum& out);

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

LossAndGrad loss_and_grad(const ParamVector& params, const Batch& batch, const ForwardMode& mode);

/// Mean loss of the objective, computed by the forward pass alone.
double objective(const ParamVector& params, const Matrix& inputs,
                 std::span<const std::uint64_t> ids, const LossTargets& targets,
                 const ForwardMode& mode);

/// Central differences of `f` around `point`, one coordinate at a time.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> point,
    double eps);

ParamVector finite_difference_gradient(const ParamVector& params, const Batch& batch,
                                       const ForwardMode& mode, double eps);

}  // namespace lofi
