// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/weight_space.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lofi/errors.hpp"
#include "lofi/eval_stats.hpp"
#include "lofi/random.hpp"

namespace lofi {

ParamVector uniform_average(std::span<const ParamVector> params) {
  if (params.empty()) throw LayoutError("uniform_average: empty list");
  std::vector<std::span<const double>> views;
  views.reserve(params.size());
  for (const auto& p : params) {
    params.front().require_same_layout(p, "uniform_average");
    views.push_back(p.values());
  }
  ParamVector out = ParamVector::zeros_like(params.front());
  const auto mean = exact_mean(views);
  std::copy(mean.begin(), mean.end(), out.values().begin());
  return out;
}

EmaState EmaState::start(double decay, const ParamVector& like) {
  if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("ema.decay", "must be in (0, 1)");
  EmaState s;
  s.decay = decay;
  s.accum = ParamVector::zeros_like(like);
  s.debiased = ParamVector::zeros_like(like);
  return s;
}

EmaState ema_update(EmaState state, const ParamVector& params) {
  state.accum.require_same_layout(params, "ema_update");
  const double beta = state.decay;
  state.steps += 1;
  state.decay_power *= beta;
  const double rate = (1.0 - beta) / (1.0 - state.decay_power);
  auto acc = state.accum.values();
  auto deb = state.debiased.values();
  const auto v = params.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc[i] = beta * acc[i] + (1.0 - beta) * v[i];
    deb[i] = deb[i] + (v[i] - deb[i]) * rate;
  }
  return state;
}

ParamVector ema_debias(const EmaState& state) {
  if (state.steps == 0) throw std::logic_error("ema_debias: no updates yet");
  return state.debiased;
}

InterpolationCoefficient::InterpolationCoefficient(double alpha) {
  if (std::isnan(alpha)) throw std::invalid_argument("interpolation coefficient is NaN");
  alpha_ = std::clamp(alpha, 0.0, 1.0);
}

ParamVector interpolate(const ParamVector& a, const ParamVector& b, double alpha) {
  a.require_same_layout(b, "interpolate");
  ParamVector out = ParamVector::zeros_like(a);
  const auto x = a.values();
  const auto y = b.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - alpha) * x[i] + alpha * y[i];
  return out;
}

ParamVector wise_ft(const ParamVector& theta_init, const ParamVector& theta_ft,
                    InterpolationCoefficient alpha) {
  return interpolate(theta_init, theta_ft, alpha.value());
}

Matrix ensemble_predict(std::span<const ParamVector> params, const Matrix& inputs) {
  if (params.empty()) throw LayoutError("ensemble_predict: empty list");
  std::vector<Matrix> probs;
  probs.reserve(params.size());
  for (const auto& p : params) {
    params.front().require_same_layout(p, "ensemble_predict");
    probs.push_back(softmax(forward(p, inputs, ForwardMode::eval())));
  }
  std::vector<std::span<const double>> views;
  for (const auto& m : probs) views.emplace_back(m.data);
  Matrix out(inputs.rows, probs.front().cols);
  out.data = exact_mean(views);
  return out;
}

double loss_barrier(std::span<const ScanPoint> points) {
  if (points.empty()) return 0.0;
  double peak = points.front().loss;
  for (const auto& p : points) peak = std::max(peak, p.loss);
  return peak - std::max(points.front().loss, points.back().loss);
}

BarrierScan barrier_scan(const ParamVector& a, const ParamVector& b, std::size_t num_points,
                         const PointEvaluator& evaluate_point) {
  if (num_points < 2) throw std::invalid_argument("barrier_scan: need at least 2 points");
  a.require_same_layout(b, "barrier_scan");
  BarrierScan scan;
  const double last = static_cast<double>(num_points - 1);
  for (std::size_t j = 0; j < num_points; ++j) {
    const double alpha = static_cast<double>(j) / last;
    ScanPoint p = evaluate_point(interpolate(a, b, alpha));
    p.alpha = alpha;
    scan.points.push_back(p);
  }
  scan.barrier = loss_barrier(scan.points);
  return scan;
}

ScanPoint evaluate(const ParamVector& params, const Dataset& data) {
  const Logits z = forward(params, data.inputs, ForwardMode::eval());
  return {0.0, cross_entropy(z, data.labels), accuracy(z, data.labels)};
}

BarrierScan barrier_scan(const ParamVector& a, const ParamVector& b, std::size_t num_points,
                         const Dataset& eval_set) {
  return barrier_scan(a, b, num_points,
                      [&eval_set](const ParamVector& p) { return evaluate(p, eval_set); });
}

ParamVector linear_probe(const ParamVector& theta_pre, const Dataset& data,
                         const ProbeConfig& config) {
  ParamVector out = theta_pre;
  if (config.steps == 0) return out;
  const NetworkConfig& net = theta_pre.network();
  const ParamLayout layout = theta_pre.layout();
  const std::size_t H = net.hidden_dim;
  const std::size_t C = net.num_classes;
  const Matrix feats = features(theta_pre, data.inputs);
  const std::size_t batch = std::min(config.batch_size, data.size());
  if (batch == 0) throw std::invalid_argument("linear_probe: empty probe set");

  auto w = out.values().subspan(layout.head_weight.offset, C * H);
  auto bias = out.values().subspan(layout.head_bias.offset, C);
  std::vector<double> vel_w(C * H, 0.0), vel_b(C, 0.0);
  std::vector<double> gw(C * H), gb(C), z(C);

  std::size_t epoch = 0;
  std::vector<std::size_t> perm;
  std::size_t cursor = data.size();
  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + batch > data.size()) {
      perm = epoch_permutation(data.size(), derive_seed(config.seed, {0x70726f6265}), epoch++);
      cursor = 0;
    }
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t r = perm[cursor + i];
      const auto h = feats.row(r);
      for (std::size_t c = 0; c < C; ++c) {
        double s = bias[c];
        for (std::size_t k = 0; k < H; ++k) s += w[c * H + k] * h[k];
        z[c] = s;
      }
      const double m = *std::max_element(z.begin(), z.end());
      double norm = 0.0;
      for (double& v : z) norm += (v = std::exp(v - m));
      for (std::size_t c = 0; c < C; ++c) {
        const double d = z[c] / norm - (static_cast<int>(c) == data.labels[r] ? 1.0 : 0.0);
        for (std::size_t k = 0; k < H; ++k) gw[c * H + k] += d * h[k];
        gb[c] += d;
      }
    }
    cursor += batch;
    const double scale = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < gw.size(); ++i) {
      vel_w[i] = config.momentum * vel_w[i] + gw[i] * scale;
      w[i] -= config.lr * vel_w[i];
    }
    for (std::size_t c = 0; c < C; ++c) {
      vel_b[c] = config.momentum * vel_b[c] + gb[c] * scale;
      bias[c] -= config.lr * vel_b[c];
    }
  }
  return out;
}

ParamVector adapt_head(const ParamVector& pretrained, const NetworkConfig& target, HeadInit init,
                       std::span<const int> class_map, const Dataset& probe_data,
                       const ProbeConfig& probe) {
  const NetworkConfig& source = pretrained.network();
  if (source.input_dim != target.input_dim || source.hidden_dim != target.hidden_dim ||
      source.num_blocks != target.num_blocks) {
    throw LayoutError("adapt_head: body shapes differ");
  }
  const ParamLayout src = ParamLayout::of(source);
  const ParamLayout dst = ParamLayout::of(target);
  std::vector<double> v(dst.total, 0.0);
  const auto p = pretrained.values();
  std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(src.head_offset()), v.begin());

  if (init == HeadInit::MappedHead) {
    if (class_map.size() != target.num_classes) {
      throw LayoutError("adapt_head: class map has " + std::to_string(class_map.size()) +
                        " entries for " + std::to_string(target.num_classes) + " classes");
    }
    const std::size_t H = target.hidden_dim;
    for (std::size_t c = 0; c < target.num_classes; ++c) {
      const auto from = static_cast<std::size_t>(class_map[c]);
      if (from >= source.num_classes) throw LayoutError("adapt_head: class map out of range");
      std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(src.head_weight.offset + from * H), H,
                  v.begin() + static_cast<std::ptrdiff_t>(dst.head_weight.offset + c * H));
      v[dst.head_bias.offset + c] = p[src.head_bias.offset + from];
    }
  }
  ParamVector out(target, std::move(v));
  if (init == HeadInit::LinearProbe) out = linear_probe(out, probe_data, probe);
  return out;
}

}  // namespace lofi
