// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/data.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "lofi/errors.hpp"
#include "lofi/json_io.hpp"
#include "lofi/random.hpp"

namespace lofi {

namespace {

Matrix cluster_means(std::size_t count, std::size_t dim, Rng& rng) {
  Matrix means(count, dim);
  for (double& v : means.data) v = rng.normal();
  return means;
}

Dataset sample_clusters(const Matrix& means, std::span<const int> source_of_label,
                        std::size_t n, double spread, Rng& rng) {
  const std::size_t classes = source_of_label.size();
  Dataset d{Matrix(n, means.cols), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    d.labels[i] = label;
    const auto mu = means.row(static_cast<std::size_t>(source_of_label[label]));
    auto x = d.inputs.row(i);
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = mu[k] + spread * rng.normal();
  }
  return d;
}

}  // namespace

void TaskSpec::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes", "must be >= 1");
  if (input_dim < 2 && shift.kind == ShiftKind::Rotation && shift.magnitude != 0.0) {
    throw ConfigError("shift", "rotation needs input_dim >= 2");
  }
  if (input_dim < 1) throw ConfigError("input_dim", "must be >= 1");
  if (!(cluster_spread > 0.0) || !std::isfinite(cluster_spread)) {
    throw ConfigError("cluster_spread", "must be finite and > 0");
  }
  if (!(domain_gap >= 0.0) || !std::isfinite(domain_gap)) {
    throw ConfigError("domain_gap", "must be finite and >= 0");
  }
  if (pretrain_size < 2 * num_classes) throw ConfigError("pretrain_size", "must be >= 2*num_classes");
  if (finetune_size < num_classes) throw ConfigError("finetune_size", "must be >= num_classes");
  if (test_size < num_classes) throw ConfigError("test_size", "must be >= num_classes");
  if (!std::isfinite(shift.magnitude)) throw ConfigError("shift.magnitude", "must be finite");
}

Batch Dataset::gather(std::span<const std::size_t> indices) const {
  Batch b;
  b.inputs = Matrix(indices.size(), inputs.cols);
  b.labels.resize(indices.size());
  b.ids.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw std::out_of_range("Dataset::gather: index " + std::to_string(src));
    const auto row = inputs.row(src);
    std::copy(row.begin(), row.end(), b.inputs.row(i).begin());
    b.labels[i] = labels[src];
    b.ids[i] = src;
  }
  return b;
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(idx);
}

TaskBundle generate_task(const TaskSpec& spec) {
  spec.validate();
  TaskBundle task;
  task.spec = spec;
  const std::size_t pre_classes = 2 * spec.num_classes;

  Rng rng(derive_seed(spec.seed, {0x7461736b}));
  const Matrix means = cluster_means(pre_classes, spec.input_dim, rng);

  // Fine-tune classes: a seeded subset of the pretraining classes.
  std::vector<std::size_t> order(pre_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = pre_classes; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  task.class_map.resize(spec.num_classes);
  for (std::size_t c = 0; c < spec.num_classes; ++c) task.class_map[c] = static_cast<int>(order[c]);

  Matrix ft_means(spec.num_classes, spec.input_dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto mu = means.row(order[c]);
    auto out = ft_means.row(c);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = mu[k] + spec.domain_gap * rng.normal();
  }

  std::vector<int> identity_pre(pre_classes);
  std::iota(identity_pre.begin(), identity_pre.end(), 0);
  std::vector<int> identity_ft(spec.num_classes);
  std::iota(identity_ft.begin(), identity_ft.end(), 0);

  task.pretrain = sample_clusters(means, identity_pre, spec.pretrain_size, spec.cluster_spread, rng);
  task.finetune_train =
      sample_clusters(ft_means, identity_ft, spec.finetune_size, spec.cluster_spread, rng);
  task.test_id = sample_clusters(ft_means, identity_ft, spec.test_size, spec.cluster_spread, rng);
  task.test_ood = Dataset{apply_shift(task.test_id.inputs, spec.shift), task.test_id.labels};
  return task;
}

Matrix apply_shift(const Matrix& inputs, const ShiftSpec& shift) {
  Matrix out = inputs;
  if (shift.magnitude == 0.0) return out;
  switch (shift.kind) {
    case ShiftKind::Rotation: {
      if (inputs.cols < 2) throw DimensionError("apply_shift: rotation needs >= 2 columns");
      const double c = std::cos(shift.magnitude);
      const double s = std::sin(shift.magnitude);
      for (std::size_t r = 0; r < out.rows; ++r) {
        const double x0 = inputs(r, 0);
        const double x1 = inputs(r, 1);
        out(r, 0) = c * x0 - s * x1;
        out(r, 1) = s * x0 + c * x1;
      }
      break;
    }
    case ShiftKind::Noise: {
      Rng rng(derive_seed(shift.seed, {0x6e6f697365}));
      for (double& v : out.data) v += shift.magnitude * rng.normal();
      break;
    }
    case ShiftKind::Scale:
      for (double& v : out.data) v *= 1.0 + shift.magnitude;
      break;
  }
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {0x7065726d, epoch}));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  return perm;
}

std::vector<std::vector<std::size_t>> shard_indices(std::size_t dataset_size, std::uint64_t epoch,
                                                    std::size_t rank, std::size_t world_size,
                                                    std::size_t batch_size, std::uint64_t seed) {
  if (world_size == 0 || rank >= world_size) {
    throw std::out_of_range("shard_epoch: rank " + std::to_string(rank) + " outside world of " +
                            std::to_string(world_size));
  }
  if (batch_size == 0) throw std::invalid_argument("shard_epoch: batch_size must be >= 1");
  const std::size_t window = batch_size * world_size;
  if (window > dataset_size) {
    throw std::invalid_argument("shard_epoch: batch_size*world_size exceeds dataset size");
  }
  const auto perm = epoch_permutation(dataset_size, seed, epoch);
  const std::size_t steps = dataset_size / window;
  std::vector<std::vector<std::size_t>> out(steps, std::vector<std::size_t>(batch_size));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < batch_size; ++j) out[t][j] = perm[t * window + rank + j * world_size];
  }
  return out;
}

std::vector<Batch> shard_epoch(const Dataset& dataset, std::uint64_t epoch, std::size_t rank,
                               std::size_t world_size, std::size_t batch_size,
                               std::uint64_t seed) {
  std::vector<Batch> out;
  for (const auto& idx : shard_indices(dataset.size(), epoch, rank, world_size, batch_size, seed)) {
    out.push_back(dataset.gather(idx));
  }
  return out;
}

void save_task(const TaskBundle& task, const std::filesystem::path& path) {
  write_json_file(path, task_to_json(task));
}

TaskBundle load_task(const std::filesystem::path& path) { return task_from_json(read_json_file(path)); }

}  // namespace lofi
