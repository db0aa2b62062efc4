// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lofi/tensor.hpp"

namespace lofi {

enum class ShiftKind { Rotation, Noise, Scale };

/// Distribution shift applied to the in-distribution test inputs.
/// rotation: angle `magnitude` (radians) in the plane of input axes 0 and 1.
/// noise: additive Gaussian with stddev `magnitude`, drawn from `seed`.
/// scale: inputs multiplied by (1 + magnitude).
/// Magnitude 0 is the identity for every kind.
struct ShiftSpec {
  ShiftKind kind = ShiftKind::Rotation;
  double magnitude = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const ShiftSpec&) const = default;
};

/// Gaussian-cluster transfer task. Pretraining uses 2*num_classes clusters;
/// fine-tuning uses num_classes of them, each moved by a per-class offset of
/// scale `domain_gap` so that fine-tuning has something left to learn.
struct TaskSpec {
  std::size_t num_classes = 10;
  std::size_t input_dim = 16;
  double cluster_spread = 1.0;
  double domain_gap = 0.5;
  std::size_t pretrain_size = 4000;
  std::size_t finetune_size = 1600;
  std::size_t test_size = 1000;
  ShiftSpec shift{ShiftKind::Rotation, 0.8, 0};
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

struct Dataset {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }

  /// Rows at `indices`, in that order; ids are the dataset indices.
  Batch gather(std::span<const std::size_t> indices) const;
  Batch all() const;

  bool operator==(const Dataset&) const = default;
};

struct TaskBundle {
  TaskSpec spec;
  Dataset pretrain;
  Dataset finetune_train;
  Dataset test_id;
  Dataset test_ood;
  /// class_map[c] is the pretraining class that fine-tune class c came from.
  std::vector<int> class_map;

  bool operator==(const TaskBundle&) const = default;
};

TaskBundle generate_task(const TaskSpec& spec);

Matrix apply_shift(const Matrix& inputs, const ShiftSpec& shift);

/// Permutation of [0, n) determined only by (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Dataset indices for each step of one epoch on one rank.
///
/// Step t covers the window perm[t*B, (t+1)*B) with B = batch_size*world_size,
/// and rank r takes positions r, r+world_size, r+2*world_size, ... of that
/// window. Ranks never share an example within an epoch; the tail that does
/// not fill a whole window is dropped.
std::vector<std::vector<std::size_t>> shard_indices(std::size_t dataset_size, std::uint64_t epoch,
                                                    std::size_t rank, std::size_t world_size,
                                                    std::size_t batch_size, std::uint64_t seed);

std::vector<Batch> shard_epoch(const Dataset& dataset, std::uint64_t epoch, std::size_t rank,
                               std::size_t world_size, std::size_t batch_size,
                               std::uint64_t seed);

void save_task(const TaskBundle& task, const std::filesystem::path& path);
TaskBundle load_task(const std::filesystem::path& path);

}  // namespace lofi
