// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lofi/errors.hpp"
#include "lofi/random.hpp"

namespace lofi {

namespace {

constexpr double kPartnerFloor = 1e-12;

// Activations of one example, kept for the backward pass.
struct Trace {
  std::vector<std::vector<double>> hidden;  // h_0 .. h_L
  std::vector<std::vector<double>> branch;  // tanh(W_l h_l + b_l), one per block
  std::vector<double> scale;                // residual multipliers
  std::vector<double> logits;

  Trace(const NetworkConfig& c)
      : hidden(c.num_blocks + 1, std::vector<double>(c.hidden_dim)),
        branch(c.num_blocks, std::vector<double>(c.hidden_dim)),
        scale(c.num_blocks),
        logits(c.num_classes) {}
};

// out = W x + b, W stored [out][in].
void affine(const double* w, const double* b, std::span<const double> x, std::span<double> out) {
  const std::size_t in = x.size();
  for (std::size_t j = 0; j < out.size(); ++j) {
    double s = b[j];
    const double* row = w + j * in;
    for (std::size_t k = 0; k < in; ++k) s += row[k] * x[k];
    out[j] = s;
  }
}

void run_example(const ParamVector& params, const ParamLayout& layout, std::span<const double> x,
                 std::uint64_t key, const ForwardMode& mode, Trace& t) {
  const double* p = params.values().data();
  auto& h0 = t.hidden[0];
  affine(p + layout.embed_weight.offset, p + layout.embed_bias.offset, x, h0);
  for (double& v : h0) v = std::tanh(v);
  for (std::size_t l = 0; l < layout.block_weight.size(); ++l) {
    const auto& in = t.hidden[l];
    auto& out = t.hidden[l + 1];
    const double s = block_scale(mode, key, l);
    t.scale[l] = s;
    if (s == 0.0) {
      out = in;
      continue;
    }
    auto& br = t.branch[l];
    affine(p + layout.block_weight[l].offset, p + layout.block_bias[l].offset, in, br);
    for (std::size_t j = 0; j < br.size(); ++j) {
      br[j] = std::tanh(br[j]);
      out[j] = in[j] + s * br[j];
    }
  }
  affine(p + layout.head_weight.offset, p + layout.head_bias.offset, t.hidden.back(), t.logits);
}

void check_inputs(const NetworkConfig& config, const Matrix& inputs,
                  std::span<const std::uint64_t> ids) {
  if (inputs.cols != config.input_dim) {
    throw DimensionError("forward: input has " + std::to_string(inputs.cols) +
                         " columns, network expects " + std::to_string(config.input_dim));
  }
  if (!ids.empty() && ids.size() != inputs.rows) {
    throw DimensionError("forward: " + std::to_string(ids.size()) + " ids for " +
                         std::to_string(inputs.rows) + " rows");
  }
}

std::uint64_t key_of(std::span<const std::uint64_t> ids, std::size_t row) {
  return ids.empty() ? row : ids[row];
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (const double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

void check_label(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw std::out_of_range("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(classes) + ")");
  }
}

// Loss of one example and d(loss)/d(logits) written to `dz` (if non-null).
double example_objective(std::span<const double> z, std::size_t row, const LossTargets& t,
                         double* dz) {
  const std::size_t classes = z.size();
  const double lse = log_sum_exp(z);
  const int a = t.labels[row];
  check_label(a, classes);
  double loss = t.mix_coeff * (lse - z[a]);
  int b = -1;
  if (!t.mix_labels.empty() && t.mix_coeff != 1.0) {
    b = t.mix_labels[row];
    check_label(b, classes);
    loss += (1.0 - t.mix_coeff) * (lse - z[b]);
  }
  double kl = 0.0;
  const bool use_kl = t.partner_probs != nullptr && t.kl_weight != 0.0;
  if (use_kl) {
    const auto q = t.partner_probs->row(row);
    for (std::size_t c = 0; c < classes; ++c) {
      const double logp = z[c] - lse;
      kl += std::exp(logp) * (logp - std::log(std::max(q[c], kPartnerFloor)));
    }
    loss += t.kl_weight * kl;
  }
  if (dz != nullptr) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double logp = z[c] - lse;
      const double p = std::exp(logp);
      double g = p;
      if (use_kl) {
        g += t.kl_weight * p *
             (logp - std::log(std::max(t.partner_probs->row(row)[c], kPartnerFloor)) - kl);
      }
      dz[c] = g;
    }
    dz[a] -= t.mix_coeff;
    if (b >= 0) dz[b] -= 1.0 - t.mix_coeff;
  }
  return loss;
}

void check_targets(const Matrix& inputs, const LossTargets& t, std::size_t classes) {
  if (inputs.rows == 0) throw DimensionError("loss: empty batch");
  if (t.labels.size() != inputs.rows) throw DimensionError("loss: labels/rows mismatch");
  if (!t.mix_labels.empty() && t.mix_labels.size() != inputs.rows) {
    throw DimensionError("loss: mix labels/rows mismatch");
  }
  if (t.partner_probs != nullptr &&
      (t.partner_probs->rows != inputs.rows || t.partner_probs->cols != classes)) {
    throw DimensionError("loss: partner probabilities shape mismatch");
  }
}

}  // namespace

void NetworkConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim", "must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim", "must be >= 1");
  if (num_blocks < 1) throw ConfigError("num_blocks", "must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes", "must be >= 1");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ConfigError("drop_prob", "must be in [0, 1)");
}

std::size_t NetworkConfig::param_count() const { return ParamLayout::of(*this).total; }

ParamLayout ParamLayout::of(const NetworkConfig& c) {
  ParamLayout l;
  std::size_t off = 0;
  auto take = [&off](std::string name, std::size_t n) {
    Segment s{std::move(name), off, n};
    off += n;
    return s;
  };
  l.embed_weight = take("embed.weight", c.hidden_dim * c.input_dim);
  l.embed_bias = take("embed.bias", c.hidden_dim);
  for (std::size_t i = 0; i < c.num_blocks; ++i) {
    l.block_weight.push_back(take("block" + std::to_string(i) + ".weight", c.hidden_dim * c.hidden_dim));
    l.block_bias.push_back(take("block" + std::to_string(i) + ".bias", c.hidden_dim));
  }
  l.head_weight = take("head.weight", c.num_classes * c.hidden_dim);
  l.head_bias = take("head.bias", c.num_classes);
  l.total = off;
  return l;
}

std::vector<Segment> ParamLayout::segments() const {
  std::vector<Segment> out{embed_weight, embed_bias};
  for (std::size_t i = 0; i < block_weight.size(); ++i) {
    out.push_back(block_weight[i]);
    out.push_back(block_bias[i]);
  }
  out.push_back(head_weight);
  out.push_back(head_bias);
  return out;
}

ParamVector::ParamVector(const NetworkConfig& config, std::vector<double> values)
    : config_(config), values_(std::move(values)) {
  if (values_.size() != config.param_count()) {
    throw LayoutError("ParamVector: " + std::to_string(values_.size()) +
                      " values for a network with " + std::to_string(config.param_count()) +
                      " parameters");
  }
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  ParamVector out;
  out.config_ = other.config_;
  out.values_.assign(other.size(), 0.0);
  return out;
}

const NetworkConfig& ParamVector::network() const {
  if (!config_) throw LayoutError("ParamVector has no network layout");
  return *config_;
}

bool ParamVector::same_layout(const ParamVector& other) const noexcept {
  if (size() != other.size()) return false;
  if (config_.has_value() != other.config_.has_value()) return false;
  return !config_ || config_->same_shape(*other.config_);
}

void ParamVector::require_same_layout(const ParamVector& other, std::string_view context) const {
  if (!same_layout(other)) {
    throw LayoutError(std::string(context) + ": parameter layouts differ (" +
                      std::to_string(size()) + " vs " + std::to_string(other.size()) + ")");
  }
}

bool ParamVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool ParamVector::bitwise_equal(const ParamVector& other) const noexcept {
  return same_layout(other) &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

double block_scale(const ForwardMode& mode, std::uint64_t example_key, std::size_t block) {
  if (!mode.train || mode.drop_prob <= 0.0) return 1.0;
  const double u = hash_to_unit(derive_seed(mode.seed, {example_key, block}));
  return u < mode.drop_prob ? 0.0 : 1.0 / (1.0 - mode.drop_prob);
}

ParamVector init_params(const NetworkConfig& config, std::uint64_t seed, bool zero_head) {
  config.validate();
  const ParamLayout layout = ParamLayout::of(config);
  std::vector<double> v(layout.total, 0.0);
  Rng rng(derive_seed(seed, {0x696e6974}));
  auto fill = [&](const Segment& s, std::size_t fan_in) {
    const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < s.size; ++i) v[s.offset + i] = rng.normal(0.0, std);
  };
  fill(layout.embed_weight, config.input_dim);
  for (const auto& s : layout.block_weight) fill(s, config.hidden_dim);
  if (!zero_head) fill(layout.head_weight, config.hidden_dim);
  return ParamVector(config, std::move(v));
}

Logits forward(const ParamVector& params, const Matrix& inputs, const ForwardMode& mode,
               std::span<const std::uint64_t> ids) {
  const NetworkConfig& config = params.network();
  check_inputs(config, inputs, ids);
  const ParamLayout layout = ParamLayout::of(config);
  Logits out(inputs.rows, config.num_classes);
  Trace t(config);
  for (std::size_t r = 0; r < inputs.rows; ++r) {
    run_example(params, layout, inputs.row(r), key_of(ids, r), mode, t);
    std::copy(t.logits.begin(), t.logits.end(), out.row(r).begin());
  }
  return out;
}

Logits forward(const ParamVector& params, const Batch& batch, const ForwardMode& mode) {
  return forward(params, batch.inputs, mode, batch.ids);
}

Matrix features(const ParamVector& params, const Matrix& inputs) {
  const NetworkConfig& config = params.network();
  check_inputs(config, inputs, {});
  const ParamLayout layout = ParamLayout::of(config);
  Matrix out(inputs.rows, config.hidden_dim);
  Trace t(config);
  for (std::size_t r = 0; r < inputs.rows; ++r) {
    run_example(params, layout, inputs.row(r), r, ForwardMode::eval(), t);
    std::copy(t.hidden.back().begin(), t.hidden.back().end(), out.row(r).begin());
  }
  return out;
}

Matrix softmax(const Logits& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto z = logits.row(r);
    const double lse = log_sum_exp(z);
    auto p = out.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) p[c] = std::exp(z[c] - lse);
  }
  return out;
}

double cross_entropy(const Logits& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows || logits.rows == 0) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows) + " rows");
  }
  ExactAccumulator sum;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    check_label(labels[r], logits.cols);
    sum.add(log_sum_exp(logits.row(r)) - logits(r, labels[r]));
  }
  return sum.mean(static_cast<double>(logits.rows));
}

void GradientSum::merge(const GradientSum& other) {
  grad.add(other.grad);
  loss.add(other.loss);
  count += other.count;
}

void GradientSum::clear() noexcept {
  grad.clear();
  loss.clear();
  count = 0;
}

double GradientSum::mean_loss() const { return loss.mean(static_cast<double>(count)); }

std::vector<double> GradientSum::mean_gradient() const {
  return grad.mean(static_cast<double>(count));
}

void accumulate_loss_and_grad(const ParamVector& params, const Matrix& inputs,
                              std::span<const std::uint64_t> ids, const LossTargets& targets,
                              const ForwardMode& mode, GradientSum& out) {
  const NetworkConfig& config = params.network();
  check_inputs(config, inputs, ids);
  check_targets(inputs, targets, config.num_classes);
  const ParamLayout layout = ParamLayout::of(config);
  if (out.grad.size() != layout.total) throw LayoutError("GradientSum: wrong parameter count");

  const double* p = params.values().data();
  const std::size_t H = config.hidden_dim;
  Trace t(config);
  std::vector<double> dz(config.num_classes);
  std::vector<double> dh(H);
  std::vector<double> du(H);

  for (std::size_t r = 0; r < inputs.rows; ++r) {
    const auto x = inputs.row(r);
    run_example(params, layout, x, key_of(ids, r), mode, t);
    out.loss.add(example_objective(t.logits, r, targets, dz.data()));
    ++out.count;

    // Head.
    const auto& hl = t.hidden.back();
    for (std::size_t c = 0; c < config.num_classes; ++c) {
      for (std::size_t k = 0; k < H; ++k) out.grad.add(layout.head_weight.offset + c * H + k, dz[c] * hl[k]);
      out.grad.add(layout.head_bias.offset + c, dz[c]);
    }
    const double* wh = p + layout.head_weight.offset;
    for (std::size_t k = 0; k < H; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < config.num_classes; ++c) s += wh[c * H + k] * dz[c];
      dh[k] = s;
    }

    // Residual blocks, last to first. dh carries d(loss)/d(h_{l+1}).
    for (std::size_t l = config.num_blocks; l-- > 0;) {
      const double s = t.scale[l];
      if (s == 0.0) continue;
      const auto& br = t.branch[l];
      const auto& in = t.hidden[l];
      for (std::size_t j = 0; j < H; ++j) du[j] = s * dh[j] * (1.0 - br[j] * br[j]);
      const Segment& ws = layout.block_weight[l];
      for (std::size_t j = 0; j < H; ++j) {
        for (std::size_t k = 0; k < H; ++k) out.grad.add(ws.offset + j * H + k, du[j] * in[k]);
        out.grad.add(layout.block_bias[l].offset + j, du[j]);
      }
      const double* w = p + ws.offset;
      for (std::size_t k = 0; k < H; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < H; ++j) acc += w[j * H + k] * du[j];
        dh[k] += acc;
      }
    }

    // Embedding.
    const auto& h0 = t.hidden[0];
    for (std::size_t j = 0; j < H; ++j) {
      const double da = dh[j] * (1.0 - h0[j] * h0[j]);
      for (std::size_t k = 0; k < config.input_dim; ++k) {
        out.grad.add(layout.embed_weight.offset + j * config.input_dim + k, da * x[k]);
      }
      out.grad.add(layout.embed_bias.offset + j, da);
    }
  }
}

LossAndGrad loss_and_grad(const ParamVector& params, const Batch& batch, const ForwardMode& mode) {
  GradientSum sum(params.size());
  accumulate_loss_and_grad(params, batch.inputs, batch.ids, LossTargets::hard(batch.labels),
                           mode, sum);
  return {sum.mean_loss(), ParamVector(params.network(), sum.mean_gradient())};
}

double objective(const ParamVector& params, const Matrix& inputs,
                 std::span<const std::uint64_t> ids, const LossTargets& targets,
                 const ForwardMode& mode) {
  const Logits z = forward(params, inputs, mode, ids);
  check_targets(inputs, targets, z.cols);
  ExactAccumulator sum;
  for (std::size_t r = 0; r < z.rows; ++r) sum.add(example_objective(z.row(r), r, targets, nullptr));
  return sum.mean(static_cast<double>(z.rows));
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> point,
    double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_gradient: eps must be > 0");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

ParamVector finite_difference_gradient(const ParamVector& params, const Batch& batch,
                                       const ForwardMode& mode, double eps) {
  const NetworkConfig& config = params.network();
  const LossTargets targets = LossTargets::hard(batch.labels);
  auto f = [&](std::span<const double> v) {
    const ParamVector p(config, std::vector<double>(v.begin(), v.end()));
    return objective(p, batch.inputs, batch.ids, targets, mode);
  };
  return ParamVector(config, finite_difference_gradient(f, params.values(), eps));
}

}  // namespace lofi
