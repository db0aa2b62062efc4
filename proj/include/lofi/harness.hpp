// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lofi/costmodel.hpp"
#include "lofi/engine.hpp"
#include "lofi/json_io.hpp"
#include "lofi/weight_space.hpp"

namespace lofi {

/// lr 0.05, 8 epochs, batch 64, seed 100.
TrainConfig default_pretrain_config();

struct ExperimentConfig {
  TaskSpec task;
  NetworkConfig network;
  /// Pretraining on the 2C-class source task; seed also fixes the random init.
  TrainConfig pretrain = default_pretrain_config();
  /// Fine-tuning; the baseline always runs FullSync over topology.num_devices.
  TrainConfig train;
  Topology topology = Topology::strided(4, 4);
  CommStrategy strategy = CommStrategy::independent();
  /// Baseline size when it differs from the strategy run (0: same devices / batch).
  std::size_t baseline_devices = 0;
  std::size_t baseline_batch = 0;
  /// Drop probability for the strategy run (train.drop_prob applies to the baseline).
  std::optional<double> strategy_drop_prob;
  HeadInit head_init = HeadInit::MappedHead;
  ProbeConfig probe;
  std::optional<DiversityConfig> diversity;
  std::vector<double> ema_betas;
  std::vector<double> wise_ft_alphas;
  std::vector<std::uint64_t> seeds{0};
  std::size_t barrier_points = 21;
  /// Sweep axes and their values, e.g. {"groups": [2, 4, 8, 16]}.
  Json sweep = Json::object();
  std::string output_dir = "out";

  void validate() const;
  std::size_t baseline_device_count() const { return baseline_devices ? baseline_devices : topology.num_devices; }
  std::size_t baseline_batch_size() const { return baseline_batch ? baseline_batch : train.global_batch; }
};

ExperimentConfig experiment_from_json(const Json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);
/// Canonical form: every field explicit; output_dir excluded.
Json experiment_to_json(const ExperimentConfig& config);
/// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_hash(const ExperimentConfig& config);
std::string fnv1a_hex(std::string_view bytes);

struct HarnessOptions {
  std::filesystem::path out_root = "out";
  bool force = false;
  Execution execution = Execution::Threaded;
  /// Pretrained parameters are cached here, keyed by task, network and pretrain config.
  std::optional<std::filesystem::path> cache_dir;
};

/// Pretrains the source network (or loads it from the cache).
ParamVector pretrained_params(const TaskBundle& task, const ExperimentConfig& config,
                              const HarnessOptions& options);
/// Fine-tuning init after head adaptation.
ParamVector finetune_init(const TaskBundle& task, const ParamVector& pretrained,
                          const ExperimentConfig& config);

/// Baseline and strategy runs for every seed; returns the artifact directory
/// out_root/<config hash>. An existing directory is reused unless `force`.
struct RunArtifacts {
  std::filesystem::path dir;
  bool reused = false;
  Json summary;
};
RunArtifacts run_experiment(const ExperimentConfig& config, const HarnessOptions& options);

inline constexpr const char* kSweepAxes[] = {"groups", "nodes", "ema_beta", "wise_ft_alpha", "lambda", "epochs"};

/// Copy of `config` with one axis set to `value`.
ExperimentConfig apply_axis(const ExperimentConfig& config, const std::string& axis, double value);

/// One run per axis value; writes sweep.csv and sweep_long.csv. Returns the sweep directory.
std::filesystem::path run_sweep(const ExperimentConfig& config, const std::string& axis,
                                const HarnessOptions& options);

/// Cost grid plus jittered run times and time-to-result. Returns the report directory.
std::filesystem::path cost_report(const CostStudy& study, const HarnessOptions& options);

struct EquivalenceCheck {
  std::string name;
  bool identical = false;
  std::string detail;
};
/// Degenerate strategy equalities and threaded vs sequential, compared bitwise
/// over the whole trajectory.
std::vector<EquivalenceCheck> verify_equivalence(const ExperimentConfig& config,
                                                 const HarnessOptions& options);

struct PairScan {
  std::uint64_t seed = 0;
  std::size_t a = 0;
  std::size_t b = 0;
  BarrierScan scan;
};
struct BarrierReport {
  std::vector<PairScan> lofi;         // every worker pair, per seed
  std::vector<PairScan> random_init;  // two runs from independent random inits, per seed
};
BarrierReport barrier_report(const ExperimentConfig& config, const HarnessOptions& options);
/// Writes barrier.csv and barrier.json under out_root/barrier-<hash>.
std::filesystem::path write_barrier_report(const ExperimentConfig& config, const HarnessOptions& options);

}  // namespace lofi
