// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/engine.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

#include "lofi/errors.hpp"
#include "lofi/random.hpp"
#include "lofi/weight_space.hpp"

namespace lofi {

// ---------------------------------------------------------------------------
// Topology / strategy
// ---------------------------------------------------------------------------

Topology Topology::strided(std::size_t num_devices, std::size_t num_groups) {
  Topology t{num_devices, num_groups, std::vector<std::size_t>(num_devices)};
  for (std::size_t d = 0; d < num_devices; ++d) t.group_of[d] = num_groups ? d % num_groups : 0;
  t.validate();
  return t;
}

Topology Topology::contiguous(std::size_t num_devices, std::size_t num_groups) {
  if (num_groups == 0 || num_devices % num_groups != 0) {
    throw ConfigError("topology.num_groups", "contiguous groups need num_groups | num_devices");
  }
  Topology t{num_devices, num_groups, std::vector<std::size_t>(num_devices)};
  const std::size_t size = num_devices / num_groups;
  for (std::size_t d = 0; d < num_devices; ++d) t.group_of[d] = d / size;
  t.validate();
  return t;
}

void Topology::validate() const {
  if (num_devices < 1) throw ConfigError("topology.num_devices", "must be >= 1");
  if (num_groups < 1 || num_groups > num_devices) {
    throw ConfigError("topology.num_groups", "must satisfy 1 <= K <= n");
  }
  if (group_of.size() != num_devices) {
    throw ConfigError("topology.group_of", "needs one entry per device");
  }
  std::vector<std::size_t> count(num_groups, 0);
  for (const auto g : group_of) {
    if (g >= num_groups) throw ConfigError("topology.group_of", "group index out of range");
    ++count[g];
  }
  for (std::size_t k = 0; k < num_groups; ++k) {
    if (count[k] == 0) throw ConfigError("topology.group_of", "group " + std::to_string(k) + " is empty");
  }
  if (num_devices % num_groups == 0 && !equal_groups()) {
    throw ConfigError("topology.group_of", "groups must have equal size when K divides n");
  }
}

std::vector<std::vector<std::size_t>> Topology::members() const {
  std::vector<std::vector<std::size_t>> out(num_groups);
  for (std::size_t d = 0; d < num_devices; ++d) out[group_of[d]].push_back(d);
  return out;
}

bool Topology::equal_groups() const {
  const auto m = members();
  for (const auto& g : m) {
    if (g.size() != m.front().size()) return false;
  }
  return true;
}

std::string CommStrategy::name() const {
  switch (kind) {
    case StrategyKind::FullSync: return "full_sync";
    case StrategyKind::GroupedSync: return "grouped_sync";
    case StrategyKind::Independent: return "independent";
    case StrategyKind::LocalSgd: return "local_sgd";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (!(lr_base > 0.0) || !std::isfinite(lr_base)) throw ConfigError("train.lr_base", "must be finite and > 0");
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (global_batch < 1) throw ConfigError("train.global_batch", "must be >= 1");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw ConfigError("train.drop_prob", "must be in [0, 1)");
  const auto& o = optimizer;
  if (!std::isfinite(o.momentum) || !std::isfinite(o.beta1) || !std::isfinite(o.beta2) ||
      !std::isfinite(o.eps) || !std::isfinite(o.weight_decay)) {
    throw ConfigError("train.optimizer", "hyperparameters must be finite");
  }
}

// ---------------------------------------------------------------------------
// Optimizer and reductions
// ---------------------------------------------------------------------------

WorkerState WorkerState::start(const ParamVector& params) {
  WorkerState s;
  s.params = params;
  s.first_moment.assign(params.size(), 0.0);
  s.second_moment.assign(params.size(), 0.0);
  return s;
}

WorkerState apply_update(WorkerState state, const ParamVector& grad, double lr,
                         const OptimizerConfig& opt) {
  state.params.require_same_layout(grad, "apply_update");
  const auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericalError("apply_update: non-finite gradient at coordinate " + std::to_string(i) +
                           " (value " + std::to_string(g[i]) + ")");
    }
  }
  if (state.first_moment.size() != g.size()) state.first_moment.assign(g.size(), 0.0);
  if (state.second_moment.size() != g.size()) state.second_moment.assign(g.size(), 0.0);
  auto theta = state.params.values();
  state.updates += 1;
  switch (opt.kind) {
    case OptimizerKind::Sgd:
      for (std::size_t i = 0; i < g.size(); ++i) theta[i] -= lr * g[i];
      break;
    case OptimizerKind::SgdMomentum: {
      auto& buf = state.first_moment;
      for (std::size_t i = 0; i < g.size(); ++i) {
        buf[i] = opt.momentum * buf[i] + g[i];
        theta[i] -= lr * buf[i];
      }
      break;
    }
    case OptimizerKind::AdamW: {
      auto& m = state.first_moment;
      auto& v = state.second_moment;
      const double t = static_cast<double>(state.updates);
      const double c1 = 1.0 - std::pow(opt.beta1, t);
      const double c2 = 1.0 - std::pow(opt.beta2, t);
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
        const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
        theta[i] -= lr * (step + opt.weight_decay * theta[i]);
      }
      break;
    }
  }
  return state;
}

WorkerState local_step(WorkerState state, const Batch& batch, double lr,
                       const OptimizerConfig& optimizer, const ForwardMode& mode) {
  const auto lg = loss_and_grad(state.params, batch, mode);
  return apply_update(std::move(state), lg.grad, lr, optimizer);
}

ParamVector reduce_mean(std::span<const ParamVector> grads) { return uniform_average(grads); }

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_base) {
  if (total_steps == 0 || step > total_steps) {
    throw std::out_of_range("cosine_lr: need 0 <= step <= total_steps, total_steps >= 1");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_base * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

// ---------------------------------------------------------------------------
// Run planning
// ---------------------------------------------------------------------------

namespace {

struct Plan {
  Topology topology;
  CommStrategy strategy;
};

// Collapses degenerate strategies onto the one they are identical to.
Plan normalize(const Topology& topology, const CommStrategy& strategy) {
  topology.validate();
  Plan p{topology, strategy};
  const bool single_scope =
      strategy.kind == StrategyKind::FullSync ||
      (strategy.kind == StrategyKind::LocalSgd && (strategy.period <= 1 || topology.num_groups == 1));
  if (strategy.kind == StrategyKind::LocalSgd && strategy.period == 0) {
    throw ConfigError("strategy.period", "must be >= 1");
  }
  if (single_scope) {
    // A period-one LocalSgd communicates every step; it runs as a gradient all-reduce.
    p.topology = Topology{topology.num_devices, 1, std::vector<std::size_t>(topology.num_devices, 0)};
    p.strategy = CommStrategy::full_sync();
  }
  if (p.strategy.kind == StrategyKind::Independent) {
    if (!p.topology.equal_groups()) {
      throw ConfigError("topology", "independent groups must have equal device counts");
    }
    if (p.strategy.data_groups == 0) p.strategy.data_groups = p.topology.num_groups;
  }
  return p;
}

void check_batch(const TrainConfig& config, const Plan& plan) {
  const std::size_t n = plan.topology.num_devices;
  if (config.global_batch % n != 0) {
    throw ConfigError("train.global_batch", "must be divisible by num_devices (" + std::to_string(n) + ")");
  }
}

std::vector<std::vector<std::vector<std::size_t>>> plan_for(std::size_t dataset_size,
                                                            std::size_t epoch,
                                                            const TrainConfig& config,
                                                            const Plan& plan) {
  const Topology& topo = plan.topology;
  const std::size_t n = topo.num_devices;
  std::vector<std::vector<std::vector<std::size_t>>> out(n);
  if (plan.strategy.kind != StrategyKind::Independent) {
    for (std::size_t d = 0; d < n; ++d) {
      out[d] = shard_indices(dataset_size, epoch, d, n, config.global_batch / n, config.seed);
    }
    return out;
  }
  // Each group is its own run at batch b/K; its devices split the group batch
  // by stride.
  const std::size_t K = topo.num_groups;
  const std::size_t shards = plan.strategy.data_groups;
  const std::size_t group_batch = config.global_batch / K;
  const auto members = topo.members();
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t replica = k / shards;
    const std::uint64_t seed = replica == 0 ? config.seed : derive_seed(config.seed, {0x7265706c, replica});
    const auto stream = shard_indices(dataset_size, epoch, k % shards, shards, group_batch, seed);
    const std::size_t g = members[k].size();
    for (std::size_t j = 0; j < g; ++j) {
      auto& dev = out[members[k][j]];
      dev.resize(stream.size());
      for (std::size_t t = 0; t < stream.size(); ++t) {
        for (std::size_t i = j; i < group_batch; i += g) dev[t].push_back(stream[t][i]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

class Simulation {
 public:
  Simulation(const TaskBundle& task, const ParamVector& init, const TrainConfig& config,
             Plan plan, const TrainOptions& options)
      : task_(task),
        config_(config),
        plan_(std::move(plan)),
        options_(options),
        members_(plan_.topology.members()),
        partials_(plan_.topology.num_devices, GradientSum(init.size())),
        reduced_(members_.size()),
        step_loss_(members_.size()) {
    devices_.assign(plan_.topology.num_devices, WorkerState::start(init));
    epoch_plan_ = plan_for(task_.finetune_train.size(), 0, config_, plan_);
    steps_per_epoch_ = epoch_plan_.front().size();
    if (steps_per_epoch_ == 0) throw ConfigError("train.global_batch", "larger than the fine-tune set");
    total_steps_ = steps_per_epoch_ * config_.epochs;
    for (const double beta : options_.ema_betas) {
      ema_.push_back({"merged", EmaState::start(beta, init)});
      ema_.push_back({"0", EmaState::start(beta, init)});
    }
    if (options_.diversity) {
      if (plan_.strategy.kind == StrategyKind::FullSync) {
        throw ConfigError("diversity", "needs more than one group");
      }
      if (!plan_.topology.equal_groups()) throw ConfigError("diversity", "groups must be equal size");
      options_.diversity->validate(members_.size());
    }
    result_.workers.resize(members_.size());
  }

  RunResult run() {
    if (options_.eval_every_epoch) evaluate(0);
    if (options_.execution == Execution::Sequential || devices_.size() == 1) {
      run_sequential();
    } else {
      run_threaded();
    }
    if (error_) std::rethrow_exception(error_);
    for (std::size_t k = 0; k < members_.size(); ++k) result_.workers[k] = representative(k);
    result_.merged = uniform_average(result_.workers);
    for (auto& [source, state] : ema_) {
      result_.ema.push_back({state.decay, source, ema_debias(state)});
    }
    result_.steps = total_steps_;
    return std::move(result_);
  }

 private:
  const ParamVector& representative(std::size_t group) const {
    return devices_[members_[group].front()].params;
  }

  std::size_t group_of(std::size_t device) const { return plan_.topology.group_of[device]; }

  double lr_at(std::size_t step) const {
    return config_.schedule == LrSchedule::Constant ? config_.lr_base
                                                    : cosine_lr(step, total_steps_, config_.lr_base);
  }

  // Masks are keyed by group too, so partners sharing a mixed batch still drop
  // different blocks.
  ForwardMode mode_at(std::size_t step, std::size_t group) const {
    return ForwardMode::training(config_.drop_prob, derive_seed(config_.seed, {0x6470, step, group}));
  }

  // Phase 1, per device: local gradient sum of this step's examples.
  void compute(std::size_t device) {
    GradientSum& out = partials_[device];
    out.clear();
    const std::size_t t = step_ % steps_per_epoch_;
    const Batch batch = task_.finetune_train.gather(epoch_plan_[device][t]);
    const ForwardMode mode = mode_at(step_, group_of(device));
    if (!options_.diversity) {
      accumulate_loss_and_grad(devices_[device].params, batch.inputs, batch.ids,
                               LossTargets::hard(batch.labels), mode, out);
      return;
    }
    // Partners see the same mixed batch and exchange predictions on it.
    const DiversityConfig& div = *options_.diversity;
    const std::size_t k = group_of(device);
    const std::size_t partner_group = div.pairing[k];
    const auto& mine = members_[k];
    const std::size_t slot = static_cast<std::size_t>(
        std::find(mine.begin(), mine.end(), device) - mine.begin());
    const std::size_t partner = members_[partner_group][slot];
    const Batch other = task_.finetune_train.gather(epoch_plan_[partner][t]);
    const bool first = k < partner_group;
    const std::uint64_t mix_seed =
        derive_seed(config_.seed, {0x646976, step_, std::min(k, partner_group), slot});
    const MixedBatch mixed = first ? mix_batches(batch, other, div.mix_alpha, mix_seed)
                                   : mix_batches(other, batch, div.mix_alpha, mix_seed);
    const Matrix partner_probs =
        softmax(forward(devices_[partner].params, mixed.inputs, mode_at(step_, partner_group), mixed.ids));
    LossTargets targets = mixed.targets();
    targets.partner_probs = &partner_probs;
    targets.kl_weight = div.lambda;
    accumulate_loss_and_grad(devices_[device].params, mixed.inputs, mixed.ids, targets, mode, out);
  }

  // Serial: reduce partial sums within each synchronization scope.
  void reduce() {
    for (std::size_t k = 0; k < members_.size(); ++k) {
      GradientSum total(partials_.front().grad.size());
      for (const std::size_t d : members_[k]) total.merge(partials_[d]);
      ParamVector g = ParamVector::zeros_like(devices_.front().params);
      const auto mean = total.mean_gradient();
      std::copy(mean.begin(), mean.end(), g.values().begin());
      if (!g.all_finite()) {
        throw NumericalError("non-finite gradient in group " + std::to_string(k) + " at step " +
                             std::to_string(step_));
      }
      reduced_[k] = std::move(g);
      step_loss_[k].add(total.mean_loss());
      result_.examples_consumed += total.count;
    }
  }

  // Phase 2, per device: optimizer update with the scope's mean gradient.
  void apply(std::size_t device) {
    devices_[device] = apply_update(std::move(devices_[device]), reduced_[group_of(device)],
                                    lr_at(step_), config_.optimizer);
  }

  // Serial: invariants, periodic averaging, EMA, metrics, next epoch's plan.
  void finish_step() {
    for (std::size_t k = 0; k < members_.size(); ++k) {
      const ParamVector& rep = representative(k);
      for (const std::size_t d : members_[k]) {
        if (!devices_[d].params.bitwise_equal(rep)) {
          throw std::logic_error("device " + std::to_string(d) + " diverged from group " +
                                 std::to_string(k) + " at step " + std::to_string(step_));
        }
      }
    }
    const std::size_t done = step_ + 1;
    if (plan_.strategy.kind == StrategyKind::LocalSgd && done % plan_.strategy.period == 0 &&
        done < total_steps_) {
      const ParamVector avg = uniform_average(representatives());
      for (auto& dev : devices_) dev.params = avg;
    }
    if (!ema_.empty()) {
      const ParamVector merged = uniform_average(representatives());
      for (auto& [source, state] : ema_) {
        state = ema_update(std::move(state), source == "merged" ? merged : representative(0));
      }
    }
    if (options_.record_trajectory) result_.trajectory.push_back(representatives());
    if (done % steps_per_epoch_ == 0) {
      const std::size_t epoch = done / steps_per_epoch_;
      for (std::size_t k = 0; k < members_.size(); ++k) {
        result_.metrics.push_back({options_.run_id, epoch, std::to_string(k), "train", "loss",
                                   step_loss_[k].mean(static_cast<double>(steps_per_epoch_))});
        step_loss_[k].clear();
      }
      if (options_.eval_every_epoch || epoch == config_.epochs) evaluate(epoch);
      if (epoch < config_.epochs) {
        epoch_plan_ = plan_for(task_.finetune_train.size(), epoch, config_, plan_);
      }
    }
    ++step_;
  }

  std::vector<ParamVector> representatives() const {
    std::vector<ParamVector> reps;
    for (std::size_t k = 0; k < members_.size(); ++k) reps.push_back(representative(k));
    return reps;
  }

  void evaluate(std::size_t epoch) {
    const auto reps = representatives();
    const ParamVector merged = uniform_average(reps);
    const std::pair<const char*, const Dataset*> splits[] = {{"test_id", &task_.test_id},
                                                             {"test_ood", &task_.test_ood}};
    for (const auto& [split, data] : splits) {
      std::vector<Matrix> probs;
      for (std::size_t k = 0; k < reps.size(); ++k) {
        const Logits z = forward(reps[k], data->inputs, ForwardMode::eval());
        record(epoch, std::to_string(k), split, z, data->labels);
        probs.push_back(softmax(z));
      }
      record(epoch, "merged", split, forward(merged, data->inputs, ForwardMode::eval()),
             data->labels);
      std::vector<std::span<const double>> views;
      for (const auto& p : probs) views.emplace_back(p.data);
      Matrix ens(data->inputs.rows, probs.front().cols);
      ens.data = exact_mean(views);
      result_.metrics.push_back(
          {options_.run_id, epoch, "ensemble", split, "accuracy", accuracy(ens, data->labels)});
    }
  }

  void record(std::size_t epoch, const std::string& worker, const char* split, const Logits& z,
              const std::vector<int>& labels) {
    result_.metrics.push_back({options_.run_id, epoch, worker, split, "accuracy", accuracy(z, labels)});
    result_.metrics.push_back({options_.run_id, epoch, worker, split, "loss", cross_entropy(z, labels)});
  }

  void run_sequential() {
    try {
      while (step_ < total_steps_) {
        for (std::size_t d = 0; d < devices_.size(); ++d) compute(d);
        reduce();
        for (std::size_t d = 0; d < devices_.size(); ++d) apply(d);
        finish_step();
      }
    } catch (...) {
      error_ = std::current_exception();
    }
  }

  // One thread per device; the two barrier completions run the serial phases.
  void run_threaded() {
    std::mutex error_mutex;
    auto fail = [&](std::exception_ptr e) {
      std::lock_guard lock(error_mutex);
      if (!error_) error_ = e;
    };
    // Workers branch only on flags that completions write while every thread
    // is blocked, so all of them take the same path through each phase.
    bool failed = false;
    bool stop = step_ >= total_steps_;
    auto guarded = [&](auto&& fn) noexcept {
      if (!error_) {
        try {
          fn();
        } catch (...) {
          fail(std::current_exception());
        }
      }
      failed = error_ != nullptr;
    };
    auto after_compute = [&]() noexcept { guarded([&] { reduce(); }); };
    auto after_apply = [&]() noexcept {
      guarded([&] { finish_step(); });
      stop = failed || step_ >= total_steps_;
    };
    const auto n = static_cast<std::ptrdiff_t>(devices_.size());
    std::barrier reduce_point(n, after_compute);
    std::barrier step_point(n, after_apply);

    auto worker = [&](std::size_t d) {
      while (!stop) {
        try {
          compute(d);
        } catch (...) {
          fail(std::current_exception());
        }
        reduce_point.arrive_and_wait();
        if (!failed) {
          try {
            apply(d);
          } catch (...) {
            fail(std::current_exception());
          }
        }
        step_point.arrive_and_wait();
      }
    };
    std::vector<std::jthread> threads;
    for (std::size_t d = 0; d < devices_.size(); ++d) threads.emplace_back(worker, d);
  }

  const TaskBundle& task_;
  TrainConfig config_;
  Plan plan_;
  TrainOptions options_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<WorkerState> devices_;
  std::vector<GradientSum> partials_;
  std::vector<ParamVector> reduced_;
  std::vector<ExactAccumulator> step_loss_;
  std::vector<std::vector<std::vector<std::size_t>>> epoch_plan_;
  std::vector<std::pair<std::string, EmaState>> ema_;
  std::size_t steps_per_epoch_ = 0;
  std::size_t total_steps_ = 0;
  std::size_t step_ = 0;
  std::exception_ptr error_;
  RunResult result_;
};

}  // namespace

std::vector<std::vector<std::vector<std::size_t>>> plan_epoch(std::size_t dataset_size,
                                                              std::size_t epoch,
                                                              const TrainConfig& config,
                                                              const Topology& topology,
                                                              const CommStrategy& strategy) {
  const Plan plan = normalize(topology, strategy);
  check_batch(config, plan);
  return plan_for(dataset_size, epoch, config, plan);
}

RunResult train(const TaskBundle& task, const ParamVector& init, const TrainConfig& config,
                const Topology& topology, const CommStrategy& strategy,
                const TrainOptions& options) {
  config.validate();
  const NetworkConfig& net = init.network();
  if (net.input_dim != task.finetune_train.inputs.cols) {
    throw ConfigError("network.input_dim", "does not match the task");
  }
  if (!init.all_finite()) throw NumericalError("train: initial parameters are not finite");
  Plan plan = normalize(topology, strategy);
  check_batch(config, plan);
  Simulation sim(task, init, config, std::move(plan), options);
  return sim.run();
}

}  // namespace lofi
