// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lofi/engine.hpp"
#include "lofi/json_io.hpp"

namespace lofi {

struct LayerCost {
  double backward_seconds = 0.0;
  double gradient_bytes = 0.0;
};

/// Per-iteration timing of one node. Layers are listed input to output; the
/// backward pass visits them in reverse.
struct CostProfile {
  std::string id;
  std::vector<LayerCost> layers;
  double forward_seconds = 0.0;
  double bandwidth = 1.0;  // bytes per second
  double latency = 0.0;    // seconds per message
  double bucket_bytes = 0.0;  // 0: one layer per bucket

  void validate() const;
  double compute_seconds() const;  // forward + all backward
  double total_bytes() const;
  double message_seconds(double bytes) const { return latency + bytes / bandwidth; }
  /// Compute times scaled by `factor`; gradient sizes unchanged.
  CostProfile scaled(double factor) const;
};

/// Buckets as layer index lists in the order they become ready (output side first).
std::vector<std::vector<std::size_t>> make_buckets(const CostProfile& profile);

enum class SyncMode { CrossNode, None };

/// Event simulation of one iteration: compute runs backward L..1 on one
/// resource, the network sends buckets FIFO as soon as their layers are done.
double simulate_iteration(const CostProfile& profile, bool overlap, SyncMode sync);

/// 100 * (t_multi - t_single) / t_single; requires t_single > 0.
double overhead_percent(double t_multi, double t_single);

enum class JitterKind { None, LogNormal, FixedStraggler };

/// Per-node per-iteration compute slowdown, always >= 1.
/// lognormal: 1 + exp(mu + sigma * Z). fixed_straggler: `factor` on `node`, 1 elsewhere.
struct JitterSpec {
  JitterKind kind = JitterKind::None;
  double mu = 0.0;
  double sigma = 0.0;
  std::size_t node = 0;
  double factor = 1.0;

  void validate() const;
  /// slowdowns[node][iteration]; node streams depend only on (seed, node).
  std::vector<std::vector<double>> draw(std::size_t nodes, std::size_t iterations,
                                        std::uint64_t seed) const;
};

/// Wall-clock seconds for `iterations` steps on `nodes` nodes, one node per
/// device of `topology`. Groups that span one node send nothing per step;
/// lo-fi strategies pay one final parameter reduce.
double simulate_run_time(const CostProfile& profile, const JitterSpec& jitter,
                         const CommStrategy& strategy, const Topology& topology,
                         std::size_t iterations, std::uint64_t seed, bool overlap = true);

/// Queue wait per job size. `wait_samples[n]` optionally lists waits observed
/// for independent n-node jobs.
struct ScheduleEstimate {
  std::map<std::size_t, double> queue_wait;
  std::map<std::size_t, std::vector<double>> wait_samples;
  double run_time = 0.0;
};

/// Wait plus run time for `jobs` concurrent jobs of `nodes_per_job` nodes;
/// with samples the slowest of the first `jobs` waits counts.
/// Throws ConfigError if the table has no entry for `nodes_per_job`.
double time_to_result(const ScheduleEstimate& estimate, std::size_t nodes_per_job,
                      std::size_t jobs = 1);

struct CostRow {
  std::string profile_id;
  std::string strategy;
  bool overlap = false;
  double batch_factor = 1.0;
  double seconds = 0.0;
  double overhead_percent = 0.0;
};

inline constexpr const char* kCostHeader =
    "profile_id,strategy,overlap,batch_factor,seconds,overhead_percent";

std::string cost_csv(std::span<const CostRow> rows);

/// Calibration bundle: profiles plus the report grid.
struct CostStudy {
  std::vector<CostProfile> profiles;
  JitterSpec jitter;
  ScheduleEstimate schedule;
  std::size_t nodes = 4;
  std::size_t iterations = 100;
  std::vector<double> batch_factors{0.25, 0.5, 1.0, 2.0, 4.0};
  std::uint64_t seed = 0;
};

CostProfile profile_from_json(const Json& j, std::string_view path = "profile");
JitterSpec jitter_from_json(const Json& j, std::string_view path = "jitter");
CostStudy cost_study_from_json(const Json& j);
CostStudy load_cost_study(const std::filesystem::path& path);

/// Grid of {overlap} x {batch factor} x {full_sync, independent} iteration
/// times and 1 -> n node overheads.
std::vector<CostRow> cost_grid(const CostStudy& study);

}  // namespace lofi
