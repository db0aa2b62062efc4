// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lofi/data.hpp"
#include "lofi/diversity.hpp"
#include "lofi/eval_stats.hpp"
#include "lofi/nn.hpp"

namespace lofi {

/// n devices partitioned into K groups. Devices in a group synchronize
/// gradients with each other and never with other groups.
struct Topology {
  std::size_t num_devices = 1;
  std::size_t num_groups = 1;
  std::vector<std::size_t> group_of;

  /// Device d joins group d mod K. With strided sharding this gives group k
  /// exactly the examples an independent run at batch b/K would draw.
  static Topology strided(std::size_t num_devices, std::size_t num_groups);
  /// Devices [k*n/K, (k+1)*n/K) form group k; requires K | n.
  static Topology contiguous(std::size_t num_devices, std::size_t num_groups);

  void validate() const;
  /// Devices of each group, in rank order.
  std::vector<std::vector<std::size_t>> members() const;
  bool equal_groups() const;
};

enum class StrategyKind { FullSync, GroupedSync, Independent, LocalSgd };

struct CommStrategy {
  StrategyKind kind = StrategyKind::FullSync;
  /// LocalSgd: parameters are averaged across groups every `period` steps.
  std::size_t period = 1;
  /// Independent: groups draw from `data_groups` coordinated shards (0 means
  /// K). With K > data_groups the extra groups replay the shards under fresh
  /// seeds and the run sees K/data_groups times the data of the baseline.
  std::size_t data_groups = 0;

  static CommStrategy full_sync() { return {}; }
  static CommStrategy grouped_sync() { return {StrategyKind::GroupedSync}; }
  static CommStrategy independent(std::size_t data_groups = 0) {
    return {StrategyKind::Independent, 1, data_groups};
  }
  static CommStrategy local_sgd(std::size_t period) { return {StrategyKind::LocalSgd, period}; }

  std::string name() const;
};

enum class OptimizerKind { Sgd, SgdMomentum, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

enum class LrSchedule { CosinePerIteration, Constant };

struct TrainConfig {
  double lr_base = 0.05;
  std::size_t epochs = 5;
  std::size_t global_batch = 64;
  OptimizerConfig optimizer;
  double drop_prob = 0.1;
  LrSchedule schedule = LrSchedule::CosinePerIteration;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Execution { Threaded, Sequential };

struct TrainOptions {
  Execution execution = Execution::Threaded;
  /// One debiased EMA per decay, for the merged trajectory and for worker 0.
  std::vector<double> ema_betas;
  std::optional<DiversityConfig> diversity;
  /// Keep every group's parameters after every step.
  bool record_trajectory = false;
  /// Evaluate after every epoch (and before the first); otherwise only at the end.
  bool eval_every_epoch = true;
  std::string run_id = "run";
};

/// One device's model and optimizer state.
struct WorkerState {
  ParamVector params;
  std::vector<double> first_moment;   // momentum buffer or Adam m
  std::vector<double> second_moment;  // Adam v
  std::size_t updates = 0;

  static WorkerState start(const ParamVector& params);
};

/// Applies one optimizer update with an already reduced gradient.
/// Throws NumericalError if the gradient holds NaN or Inf.
WorkerState apply_update(WorkerState state, const ParamVector& grad, double lr,
                         const OptimizerConfig& optimizer);

/// loss_and_grad on `batch` followed by apply_update.
WorkerState local_step(WorkerState state, const Batch& batch, double lr,
                       const OptimizerConfig& optimizer, const ForwardMode& mode);

/// Elementwise mean of gradients (exact sum, single rounding plus correction).
ParamVector reduce_mean(std::span<const ParamVector> grads);

/// lr_base * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_base);

struct EmaTrack {
  double decay = 0.0;
  std::string source;  // "merged" or a worker index
  ParamVector debiased;
};

struct RunResult {
  /// Final parameters of each group's representative (first device).
  std::vector<ParamVector> workers;
  /// uniform_average(workers), computed once at the end.
  ParamVector merged;
  std::vector<MetricRecord> metrics;
  std::size_t steps = 0;
  std::size_t examples_consumed = 0;
  /// trajectory[s][k]: group k after step s (only with record_trajectory).
  std::vector<std::vector<ParamVector>> trajectory;
  std::vector<EmaTrack> ema;
};

/// Runs distributed fine-tuning of `init` on task.finetune_train.
/// Throws ConfigError for invalid topology/strategy/config combinations.
RunResult train(const TaskBundle& task, const ParamVector& init, const TrainConfig& config,
                const Topology& topology, const CommStrategy& strategy,
                const TrainOptions& options = {});

/// Per-step example indices for every device of a run (exposed for tests).
std::vector<std::vector<std::vector<std::size_t>>> plan_epoch(std::size_t dataset_size,
                                                              std::size_t epoch,
                                                              const TrainConfig& config,
                                                              const Topology& topology,
                                                              const CommStrategy& strategy);

}  // namespace lofi
