// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lofi/errors.hpp"
#include "lofi/eval_stats.hpp"
#include "lofi/random.hpp"

namespace lofi {

namespace fs = std::filesystem;

TrainConfig default_pretrain_config() {
  TrainConfig c;
  c.lr_base = 0.05;
  c.epochs = 8;
  c.global_batch = 64;
  c.seed = 100;
  return c;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

const char* head_init_name(HeadInit h) {
  switch (h) {
    case HeadInit::MappedHead: return "mapped_head";
    case HeadInit::LinearProbe: return "linear_probe";
    case HeadInit::ZeroInit: return "zero_init";
  }
  return "mapped_head";
}

Json probe_to_json(const ProbeConfig& p) {
  return Json{{"steps", p.steps}, {"lr", p.lr}, {"momentum", p.momentum},
              {"batch_size", p.batch_size}, {"seed", p.seed}};
}

ProbeConfig probe_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"steps", "lr", "momentum", "batch_size", "seed"});
  ProbeConfig p;
  p.steps = cfg::count(j, path, "steps", p.steps);
  p.lr = cfg::number(j, path, "lr", p.lr);
  p.momentum = cfg::number(j, path, "momentum", p.momentum);
  p.batch_size = cfg::count(j, path, "batch_size", p.batch_size);
  p.seed = cfg::seed(j, path, "seed", p.seed);
  if (!(p.lr > 0.0)) throw ConfigError(cfg::join(path, "lr"), "must be > 0");
  if (p.batch_size < 1) throw ConfigError(cfg::join(path, "batch_size"), "must be >= 1");
  return p;
}

Json diversity_to_json(const DiversityConfig& d) {
  return Json{{"lambda", d.lambda}, {"pairing", d.pairing}, {"mix_alpha", d.mix_alpha}};
}

DiversityConfig diversity_from_json(const Json& j, std::string_view path, std::size_t groups) {
  cfg::only_keys(j, path, {"lambda", "pairing", "mix_alpha"});
  DiversityConfig d;
  d.lambda = cfg::number(j, path, "lambda", 0.0);
  d.mix_alpha = cfg::number(j, path, "mix_alpha", d.mix_alpha);
  d.pairing = j.contains("pairing") ? cfg::counts(j, path, "pairing") : DiversityConfig::adjacent_pairs(groups);
  try {
    d.validate(groups);
  } catch (const ConfigError& e) {
    throw e.within(std::string(path));
  }
  return d;
}

}  // namespace

void ExperimentConfig::validate() const {
  task.validate();
  network.validate();
  if (network.input_dim != task.input_dim) throw ConfigError("network.input_dim", "must equal task.input_dim");
  if (network.num_classes != task.num_classes) {
    throw ConfigError("network.num_classes", "must equal task.num_classes");
  }
  pretrain.validate();
  train.validate();
  topology.validate();
  if (seeds.empty()) throw ConfigError("seeds", "must be nonempty");
  if (strategy_drop_prob && !(*strategy_drop_prob >= 0.0 && *strategy_drop_prob < 1.0)) {
    throw ConfigError("strategy_drop_prob", "must be in [0, 1)");
  }
  if (barrier_points < 2) throw ConfigError("barrier_points", "must be >= 2");
  if (diversity) diversity->validate(topology.num_groups);
  if (train.global_batch % topology.num_devices != 0) {
    throw ConfigError("train.global_batch", "must be divisible by topology.devices");
  }
  if (baseline_batch_size() % baseline_device_count() != 0) {
    throw ConfigError("baseline.global_batch", "must be divisible by baseline.devices");
  }
  for (const double b : ema_betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("ema", "decays must be in [0, 1)");
  }
}

ExperimentConfig experiment_from_json(const Json& j) {
  cfg::only_keys(j, "", {"task", "network", "pretrain", "train", "topology", "strategy",
                         "strategy_drop_prob", "baseline", "head_init", "probe", "diversity", "ema", "wise_ft",
                         "seeds", "barrier_points", "sweep", "output_dir"});
  ExperimentConfig c;
  if (j.contains("task")) c.task = task_spec_from_json(j.at("task"), "task");
  c.network.input_dim = c.task.input_dim;
  c.network.num_classes = c.task.num_classes;
  if (j.contains("network")) {
    Json net = j.at("network");
    if (net.is_object()) {
      if (!net.contains("input_dim")) net["input_dim"] = c.task.input_dim;
      if (!net.contains("num_classes")) net["num_classes"] = c.task.num_classes;
    }
    c.network = network_from_json(net, "network");
  }
  if (j.contains("pretrain")) c.pretrain = train_from_json(j.at("pretrain"), "pretrain");
  if (j.contains("train")) c.train = train_from_json(j.at("train"), "train");
  if (j.contains("topology")) c.topology = topology_from_json(j.at("topology"), "topology");
  if (j.contains("strategy")) c.strategy = strategy_from_json(j.at("strategy"), "strategy");
  if (j.contains("strategy_drop_prob") && !j.at("strategy_drop_prob").is_null()) {
    c.strategy_drop_prob = cfg::number(j, "", "strategy_drop_prob", 0.0);
  }
  if (j.contains("baseline")) {
    const Json& b = j.at("baseline");
    cfg::only_keys(b, "baseline", {"devices", "global_batch"});
    c.baseline_devices = cfg::count(b, "baseline", "devices", 0);
    c.baseline_batch = cfg::count(b, "baseline", "global_batch", 0);
  }
  const std::string head = cfg::text(j, "", "head_init", "mapped_head");
  if (head == "mapped_head") {
    c.head_init = HeadInit::MappedHead;
  } else if (head == "linear_probe") {
    c.head_init = HeadInit::LinearProbe;
  } else if (head == "zero_init") {
    c.head_init = HeadInit::ZeroInit;
  } else {
    throw ConfigError("head_init", "expected mapped_head, linear_probe or zero_init");
  }
  if (j.contains("probe")) c.probe = probe_from_json(j.at("probe"), "probe");
  if (j.contains("diversity") && !j.at("diversity").is_null()) {
    c.diversity = diversity_from_json(j.at("diversity"), "diversity", c.topology.num_groups);
  }
  c.ema_betas = cfg::numbers(j, "", "ema");
  c.wise_ft_alphas = cfg::numbers(j, "", "wise_ft");
  if (j.contains("seeds")) {
    c.seeds.clear();
    for (const auto s : cfg::counts(j, "", "seeds")) c.seeds.push_back(s);
  }
  c.barrier_points = cfg::count(j, "", "barrier_points", c.barrier_points);
  if (j.contains("sweep")) {
    const Json& sw = cfg::object(j.at("sweep"), "sweep");
    for (const auto& [axis, values] : sw.items()) {
      if (std::find(std::begin(kSweepAxes), std::end(kSweepAxes), axis) == std::end(kSweepAxes)) {
        throw ConfigError("sweep." + axis, "unknown axis");
      }
      if (cfg::numbers(sw, "sweep", axis).empty()) throw ConfigError("sweep." + axis, "needs at least one value");
    }
    c.sweep = sw;
  }
  c.output_dir = cfg::text(j, "", "output_dir", c.output_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) { return experiment_from_json(read_json_file(path)); }

Json experiment_to_json(const ExperimentConfig& c) {
  Json j{{"task", task_spec_to_json(c.task)},
         {"network", network_to_json(c.network)},
         {"pretrain", train_to_json(c.pretrain)},
         {"train", train_to_json(c.train)},
         {"topology", topology_to_json(c.topology)},
         {"strategy", strategy_to_json(c.strategy)},
         {"strategy_drop_prob", c.strategy_drop_prob ? Json(*c.strategy_drop_prob) : Json(nullptr)},
         {"baseline", {{"devices", c.baseline_devices}, {"global_batch", c.baseline_batch}}},
         {"head_init", head_init_name(c.head_init)},
         {"probe", probe_to_json(c.probe)},
         {"diversity", c.diversity ? diversity_to_json(*c.diversity) : Json(nullptr)},
         {"ema", c.ema_betas},
         {"wise_ft", c.wise_ft_alphas},
         {"seeds", c.seeds},
         {"barrier_points", c.barrier_points},
         {"sweep", c.sweep}};
  return j;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& config) {
  return fnv1a_hex(experiment_to_json(config).dump());
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

namespace {

fs::path cache_root(const HarnessOptions& options) {
  return options.cache_dir ? *options.cache_dir : options.out_root / "cache";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

NetworkConfig source_network(const ExperimentConfig& c) {
  NetworkConfig n = c.network;
  n.num_classes = 2 * c.task.num_classes;
  return n;
}

}  // namespace

ParamVector pretrained_params(const TaskBundle& task, const ExperimentConfig& config,
                              const HarnessOptions& options) {
  const NetworkConfig net = source_network(config);
  const Json key{{"task", task_spec_to_json(config.task)},
                 {"network", network_to_json(net)},
                 {"pretrain", train_to_json(config.pretrain)}};
  const fs::path file = cache_root(options) / ("pretrain-" + fnv1a_hex(key.dump()) + ".json");
  if (fs::exists(file)) {
    const Json cached = read_json_file(file);
    if (cached.value("key", Json()) == key) return params_from_json(cached.at("params"));
  }
  TaskBundle source = task;
  source.finetune_train = task.pretrain;
  TrainOptions opts;
  opts.execution = options.execution;
  opts.eval_every_epoch = false;
  opts.run_id = "pretrain";
  const ParamVector init = init_params(net, derive_seed(config.pretrain.seed, {0x696e6974}));
  const RunResult r = train(source, init, config.pretrain, Topology::strided(1, 1),
                            CommStrategy::full_sync(), opts);
  const fs::path tmp = file.string() + ".tmp";
  write_json_file(tmp, Json{{"key", key}, {"params", params_to_json(r.merged)}});
  fs::rename(tmp, file);
  return r.merged;
}

ParamVector finetune_init(const TaskBundle& task, const ParamVector& pretrained,
                          const ExperimentConfig& config) {
  return adapt_head(pretrained, config.network, config.head_init, task.class_map, task.finetune_train,
                    config.probe);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

namespace {

struct SummaryRow {
  std::string row;
  std::string split;
  double accuracy = 0.0;
  std::optional<double> p_value;  // McNemar against the baseline
};

std::string number_tag(double v) { return format_double(v); }

struct SeedRuns {
  RunResult baseline;
  RunResult lofi;
};

TrainConfig strategy_train(const ExperimentConfig& c, std::uint64_t seed) {
  TrainConfig t = c.train;
  t.seed = seed;
  if (c.strategy_drop_prob) t.drop_prob = *c.strategy_drop_prob;
  return t;
}

SeedRuns run_seed(const TaskBundle& task, const ParamVector& init, const ExperimentConfig& c,
                  std::uint64_t seed, Execution execution) {
  TrainConfig base = c.train;
  base.seed = seed;
  base.global_batch = c.baseline_batch_size();
  TrainOptions bo;
  bo.execution = execution;
  bo.run_id = "baseline-s" + std::to_string(seed);
  TrainOptions lo = bo;
  lo.run_id = c.strategy.name() + "-s" + std::to_string(seed);
  lo.ema_betas = c.ema_betas;
  lo.diversity = c.diversity;
  SeedRuns r;
  r.baseline = train(task, init, base, Topology::strided(c.baseline_device_count(), 1),
                     CommStrategy::full_sync(), bo);
  r.lofi = train(task, init, strategy_train(c, seed), c.topology, c.strategy, lo);
  return r;
}

std::vector<SummaryRow> summarize_seed(const TaskBundle& task, const ParamVector& init,
                                       const ExperimentConfig& c, const SeedRuns& runs) {
  std::vector<SummaryRow> rows;
  const std::pair<const char*, const Dataset*> splits[] = {{"test_id", &task.test_id},
                                                           {"test_ood", &task.test_ood}};
  for (const auto& [split, data] : splits) {
    auto correct = [&](const Matrix& scores) { return correctness(scores, data->labels); };
    auto logits = [&](const ParamVector& p) { return forward(p, data->inputs, ForwardMode::eval()); };
    const auto base = correct(logits(runs.baseline.merged));
    auto add = [&](const std::string& name, const std::vector<bool>& ok, bool test) {
      const double acc = static_cast<double>(std::count(ok.begin(), ok.end(), true)) /
                         static_cast<double>(ok.size());
      SummaryRow row{name, split, acc, std::nullopt};
      if (test) row.p_value = mcnemar_exact(PairedOutcome::tally(base, ok)).p_value;
      rows.push_back(row);
    };
    add("baseline", base, false);
    add("lofi", correct(logits(runs.lofi.merged)), true);
    double individual = 0.0;
    std::vector<bool> first;
    for (std::size_t k = 0; k < runs.lofi.workers.size(); ++k) {
      const auto ok = correct(logits(runs.lofi.workers[k]));
      if (k == 0) first = ok;
      individual += static_cast<double>(std::count(ok.begin(), ok.end(), true)) /
                    static_cast<double>(ok.size());
    }
    individual /= static_cast<double>(runs.lofi.workers.size());
    rows.push_back({"lofi_individual", split, individual,
                    mcnemar_exact(PairedOutcome::tally(base, first)).p_value});
    add("lofi_ensemble", correct(ensemble_predict(runs.lofi.workers, data->inputs)), true);
    for (const auto& track : runs.lofi.ema) {
      add("ema_" + number_tag(track.decay) + "_" + (track.source == "merged" ? "merged" : "worker" + track.source),
          correct(logits(track.debiased)), true);
    }
    for (const double a : c.wise_ft_alphas) {
      add("wise_ft_" + number_tag(a), correct(logits(wise_ft(init, runs.lofi.merged, InterpolationCoefficient(a)))),
          true);
    }
  }
  return rows;
}

Json rows_to_json(const std::vector<SummaryRow>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    Json j{{"row", r.row}, {"split", r.split}, {"accuracy", r.accuracy}};
    j["mcnemar_p"] = r.p_value ? Json(*r.p_value) : Json(nullptr);
    out.push_back(j);
  }
  return out;
}

struct Aggregate {
  std::string row;
  std::string split;
  std::string metric;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

std::vector<Aggregate> aggregate(const std::vector<std::vector<SummaryRow>>& per_seed) {
  std::vector<Aggregate> out;
  const auto& first = per_seed.front();
  for (std::size_t i = 0; i < first.size(); ++i) {
    for (const char* metric : {"accuracy", "mcnemar_p"}) {
      std::vector<double> values;
      for (const auto& seed_rows : per_seed) {
        const auto& r = seed_rows[i];
        if (std::string(metric) == "accuracy") {
          values.push_back(r.accuracy);
        } else if (r.p_value) {
          values.push_back(*r.p_value);
        }
      }
      if (values.empty()) continue;
      ExactAccumulator sum;
      for (const double v : values) sum.add(v);
      out.push_back({first[i].row, first[i].split, metric, sum.mean(static_cast<double>(values.size())),
                     *std::min_element(values.begin(), values.end()),
                     *std::max_element(values.begin(), values.end()), values.size()});
    }
  }
  return out;
}

std::string aggregate_csv(const std::vector<Aggregate>& rows) {
  std::ostringstream out;
  out << "row,split,metric,mean,min,max,seeds\n";
  for (const auto& r : rows) {
    out << r.row << ',' << r.split << ',' << r.metric << ',' << format_double(r.mean) << ','
        << format_double(r.min) << ',' << format_double(r.max) << ',' << r.n << '\n';
  }
  return out.str();
}

Json aggregate_json(const std::vector<Aggregate>& rows) {
  Json out = Json::array();
  for (const auto& r : rows) {
    out.push_back({{"row", r.row}, {"split", r.split}, {"metric", r.metric}, {"mean", r.mean},
                   {"min", r.min}, {"max", r.max}, {"seeds", r.n}});
  }
  return out;
}

// Builds the directory next to its final location, then renames it in place.
template <typename Fill>
fs::path publish_dir(const fs::path& dir, bool force, bool& reused, Fill fill) {
  reused = false;
  if (fs::exists(dir)) {
    if (!force) {
      reused = true;
      return dir;
    }
    fs::remove_all(dir);
  }
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  fill(tmp);
  fs::rename(tmp, dir);
  return dir;
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& config, const HarnessOptions& options) {
  config.validate();
  RunArtifacts out;
  out.dir = options.out_root / config_hash(config);
  publish_dir(out.dir, options.force, out.reused, [&](const fs::path& dir) {
    const TaskBundle task = generate_task(config.task);
    const ParamVector pre = pretrained_params(task, config, options);
    const ParamVector init = finetune_init(task, pre, config);
    write_json_file(dir / "config.json", experiment_to_json(config));
    write_json_file(dir / "init.json", params_to_json(init));

    std::vector<std::vector<SummaryRow>> per_seed;
    Json seeds_json = Json::object();
    for (const auto seed : config.seeds) {
      const SeedRuns runs = run_seed(task, init, config, seed, options.execution);
      const fs::path sd = dir / ("seed_" + std::to_string(seed));
      std::vector<MetricRecord> records = runs.baseline.metrics;
      records.insert(records.end(), runs.lofi.metrics.begin(), runs.lofi.metrics.end());
      write_metrics(records, sd / "metrics.csv");
      write_json_file(sd / "params" / "baseline.json", params_to_json(runs.baseline.merged));
      write_json_file(sd / "params" / "lofi_merged.json", params_to_json(runs.lofi.merged));
      for (std::size_t k = 0; k < runs.lofi.workers.size(); ++k) {
        write_json_file(sd / "params" / ("lofi_worker_" + std::to_string(k) + ".json"),
                        params_to_json(runs.lofi.workers[k]));
      }
      per_seed.push_back(summarize_seed(task, init, config, runs));
      seeds_json[std::to_string(seed)] = rows_to_json(per_seed.back());
    }
    const auto agg = aggregate(per_seed);
    Json notes = Json::array();
    if (config.strategy.kind == StrategyKind::FullSync) {
      notes.push_back("strategy is full_sync: the lofi rows repeat the baseline");
    }
    if (config.diversity && config.diversity->lambda != 0.0) {
      notes.push_back("diversity partners exchange predictions every step, which adds per-step communication");
    }
    if (config.strategy.kind == StrategyKind::Independent && config.strategy.data_groups != 0 &&
        config.strategy.data_groups < config.topology.num_groups) {
      notes.push_back("groups outnumber data shards: the strategy run sees " +
                      format_double(static_cast<double>(config.topology.num_groups) /
                                    static_cast<double>(config.strategy.data_groups)) +
                      "x the baseline's examples");
    }
    out.summary = Json{{"config_hash", config_hash(config)},
                       {"strategy", config.strategy.name()},
                       {"seeds", config.seeds},
                       {"per_seed", seeds_json},
                       {"aggregate", aggregate_json(agg)},
                       {"notes", notes}};
    write_json_file(dir / "summary.json", out.summary);
    write_text(dir / "summary.csv", aggregate_csv(agg));
  });
  if (out.reused) out.summary = read_json_file(out.dir / "summary.json");
  return out;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

ExperimentConfig apply_axis(const ExperimentConfig& config, const std::string& axis, double value) {
  ExperimentConfig c = config;
  c.sweep = Json::object();
  auto whole = [&](const char* what) {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw ConfigError("sweep." + axis, std::string(what) + " must be a positive integer");
    }
    return static_cast<std::size_t>(value);
  };
  if (axis == "groups") {
    const std::size_t k = whole("group count");
    const std::size_t n = std::max(c.topology.num_devices, k);
    c.topology = Topology::strided(n, k);
    if (c.diversity) c.diversity->pairing = DiversityConfig::adjacent_pairs(k);
  } else if (axis == "nodes") {
    // Extra nodes become extra groups that replay the baseline's shards.
    const std::size_t n = whole("node count");
    const std::size_t base = config.topology.num_groups;
    if (n % base != 0) throw ConfigError("sweep.nodes", "values must be multiples of topology.groups");
    const std::size_t per_group = config.topology.num_devices / base;
    c.topology = Topology::strided(n * per_group, n);
    c.strategy = CommStrategy::independent(base);
    c.train.global_batch = config.train.global_batch / base * n;
    c.baseline_devices = config.baseline_device_count();
    c.baseline_batch = config.baseline_batch_size();
    if (c.diversity) c.diversity->pairing = DiversityConfig::adjacent_pairs(n);
  } else if (axis == "ema_beta") {
    c.ema_betas = {value};
  } else if (axis == "wise_ft_alpha") {
    c.wise_ft_alphas = {value};
  } else if (axis == "lambda") {
    DiversityConfig d = c.diversity.value_or(DiversityConfig{});
    d.lambda = value;
    if (d.pairing.empty()) d.pairing = DiversityConfig::adjacent_pairs(c.topology.num_groups);
    c.diversity = d;
  } else if (axis == "epochs") {
    c.train.epochs = whole("epoch count");
  } else {
    throw ConfigError("axis", "unknown sweep axis '" + axis + "'");
  }
  c.validate();
  return c;
}

fs::path run_sweep(const ExperimentConfig& config, const std::string& axis, const HarnessOptions& options) {
  if (std::find(std::begin(kSweepAxes), std::end(kSweepAxes), axis) == std::end(kSweepAxes)) {
    throw ConfigError("axis", "unknown sweep axis '" + axis + "'");
  }
  if (!config.sweep.contains(axis)) throw ConfigError("sweep." + axis, "no values given for this axis");
  const std::vector<double> values = cfg::numbers(config.sweep, "sweep", axis);
  const fs::path dir = options.out_root / ("sweep-" + axis + "-" + config_hash(config));
  bool reused = false;
  publish_dir(dir, options.force, reused, [&](const fs::path& tmp) {
    std::ostringstream wide;
    std::ostringstream lng;
    wide << "axis,value,run,row,split,accuracy_mean,accuracy_min,accuracy_max,mcnemar_p_mean,data_factor\n";
    lng << "axis,value,seed,row,split,metric,value\n";
    for (const double v : values) {
      const ExperimentConfig c = apply_axis(config, axis, v);
      HarnessOptions inner = options;
      inner.force = false;
      if (!inner.cache_dir) inner.cache_dir = options.out_root / "cache";
      const RunArtifacts run = run_experiment(c, inner);
      double data_factor = 1.0;
      if (c.strategy.kind == StrategyKind::Independent && c.strategy.data_groups != 0) {
        data_factor = static_cast<double>(c.topology.num_groups) / static_cast<double>(c.strategy.data_groups);
      }
      std::map<std::pair<std::string, std::string>, std::map<std::string, const Json*>> by_row;
      std::vector<std::pair<std::string, std::string>> order;
      for (const auto& a : run.summary.at("aggregate")) {
        const auto key = std::make_pair(a.at("row").get<std::string>(), a.at("split").get<std::string>());
        if (!by_row.count(key)) order.push_back(key);
        by_row[key][a.at("metric").get<std::string>()] = &a;
      }
      for (const auto& key : order) {
        const auto& m = by_row[key];
        const Json& acc = *m.at("accuracy");
        wide << axis << ',' << format_double(v) << ',' << run.dir.filename().string() << ',' << key.first
             << ',' << key.second << ',' << format_double(acc.at("mean").get<double>()) << ','
             << format_double(acc.at("min").get<double>()) << ','
             << format_double(acc.at("max").get<double>()) << ',';
        if (m.count("mcnemar_p")) wide << format_double(m.at("mcnemar_p")->at("mean").get<double>());
        wide << ',' << format_double(data_factor) << '\n';
      }
      for (const auto& [seed, rows] : run.summary.at("per_seed").items()) {
        for (const auto& r : rows) {
          lng << axis << ',' << format_double(v) << ',' << seed << ',' << r.at("row").get<std::string>() << ','
              << r.at("split").get<std::string>() << ",accuracy,"
              << format_double(r.at("accuracy").get<double>()) << '\n';
          if (!r.at("mcnemar_p").is_null()) {
            lng << axis << ',' << format_double(v) << ',' << seed << ',' << r.at("row").get<std::string>()
                << ',' << r.at("split").get<std::string>() << ",mcnemar_p,"
                << format_double(r.at("mcnemar_p").get<double>()) << '\n';
          }
        }
      }
    }
    write_text(tmp / "sweep.csv", wide.str());
    write_text(tmp / "sweep_long.csv", lng.str());
  });
  return dir;
}

// ---------------------------------------------------------------------------
// costreport
// ---------------------------------------------------------------------------

fs::path cost_report(const CostStudy& study, const HarnessOptions& options) {
  Json key = Json::array();
  for (const auto& p : study.profiles) {
    Json layers = Json::array();
    for (const auto& l : p.layers) layers.push_back({l.backward_seconds, l.gradient_bytes});
    key.push_back({p.id, layers, p.forward_seconds, p.bandwidth, p.latency, p.bucket_bytes});
  }
  key.push_back({static_cast<int>(study.jitter.kind), study.jitter.mu, study.jitter.sigma, study.jitter.node,
                 study.jitter.factor, study.nodes, study.iterations, study.batch_factors, study.seed});
  key.push_back({study.schedule.queue_wait, study.schedule.wait_samples});
  const fs::path dir = options.out_root / ("cost-" + fnv1a_hex(key.dump()));
  bool reused = false;
  publish_dir(dir, options.force, reused, [&](const fs::path& tmp) {
    const auto rows = cost_grid(study);
    write_text(tmp / "cost.csv", cost_csv(rows));

    const Topology one_group = Topology::strided(study.nodes, 1);
    const Topology per_node = Topology::strided(study.nodes, study.nodes);
    constexpr std::size_t kJitterSeeds = 100;
    Json profiles = Json::array();
    for (const auto& p : study.profiles) {
      const double single = simulate_iteration(p, true, SyncMode::None);
      ExactAccumulator full;
      ExactAccumulator lofi;
      for (std::size_t s = 0; s < kJitterSeeds; ++s) {
        const std::uint64_t seed = derive_seed(study.seed, {s});
        full.add(simulate_run_time(p, study.jitter, CommStrategy::full_sync(), one_group, study.iterations, seed));
        lofi.add(simulate_run_time(p, study.jitter, CommStrategy::independent(), per_node, study.iterations, seed));
      }
      const double full_mean = full.mean(kJitterSeeds);
      const double lofi_mean = lofi.mean(kJitterSeeds);
      Json entry{{"profile_id", p.id},
                 {"layers", p.layers.size()},
                 {"overhead_no_overlap", overhead_percent(simulate_iteration(p, false, SyncMode::CrossNode), single)},
                 {"overhead_overlap", overhead_percent(simulate_iteration(p, true, SyncMode::CrossNode), single)},
                 {"jitter_full_sync_seconds", full_mean},
                 {"jitter_independent_seconds", lofi_mean}};
      auto ttr = [&](double run_time, std::size_t nodes_per_job, std::size_t jobs) -> Json {
        ScheduleEstimate e = study.schedule;
        e.run_time = run_time;
        try {
          return time_to_result(e, nodes_per_job, jobs);
        } catch (const ConfigError&) {
          return nullptr;
        }
      };
      entry["time_to_result_full_sync"] = ttr(full_mean, study.nodes, 1);
      entry["time_to_result_independent"] = ttr(lofi_mean, 1, study.nodes);
      profiles.push_back(entry);
    }
    write_json_file(tmp / "summary.json",
                    Json{{"label", "synthetic calibration; not a hardware measurement"},
                         {"nodes", study.nodes},
                         {"iterations", study.iterations},
                         {"jitter_seeds", kJitterSeeds},
                         {"profiles", profiles}});
  });
  return dir;
}

// ---------------------------------------------------------------------------
// verify-equivalence
// ---------------------------------------------------------------------------

namespace {

std::string first_difference(const RunResult& a, const RunResult& b) {
  if (a.trajectory.size() != b.trajectory.size()) return "trajectory lengths differ";
  for (std::size_t s = 0; s < a.trajectory.size(); ++s) {
    if (a.trajectory[s].size() != b.trajectory[s].size()) return "group counts differ";
    for (std::size_t k = 0; k < a.trajectory[s].size(); ++k) {
      if (!a.trajectory[s][k].bitwise_equal(b.trajectory[s][k])) {
        return "group " + std::to_string(k) + " differs after step " + std::to_string(s);
      }
    }
  }
  if (!a.merged.bitwise_equal(b.merged)) return "merged parameters differ";
  return {};
}

bool metrics_equal(const RunResult& a, const RunResult& b) {
  if (a.metrics.size() != b.metrics.size()) return false;
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    const auto& x = a.metrics[i];
    const auto& y = b.metrics[i];
    if (x.epoch != y.epoch || x.worker_id != y.worker_id || x.split != y.split || x.metric != y.metric ||
        std::memcmp(&x.value, &y.value, sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::vector<EquivalenceCheck> verify_equivalence(const ExperimentConfig& config,
                                                 const HarnessOptions& options) {
  config.validate();
  const TaskBundle task = generate_task(config.task);
  const ParamVector init = finetune_init(task, pretrained_params(task, config, options), config);
  const std::size_t n = config.topology.num_devices;
  const std::size_t K = config.topology.num_groups;
  TrainConfig tc = config.train;
  tc.seed = config.seeds.front();
  TrainOptions opts;
  opts.execution = options.execution;
  opts.record_trajectory = true;

  std::vector<EquivalenceCheck> checks;
  auto check = [&](std::string name, const RunResult& a, const RunResult& b, bool compare_metrics) {
    std::string diff = first_difference(a, b);
    if (diff.empty() && compare_metrics && !metrics_equal(a, b)) diff = "metrics differ";
    checks.push_back({std::move(name), diff.empty(), diff.empty() ? "bitwise identical" : diff});
  };

  const RunResult full = train(task, init, tc, Topology::strided(n, 1), CommStrategy::full_sync(), opts);
  check("grouped_sync K=1 == full_sync",
        train(task, init, tc, Topology::strided(n, 1), CommStrategy::grouped_sync(), opts), full, true);
  check("full_sync n=" + std::to_string(n) + " == single worker",
        train(task, init, tc, Topology::strided(1, 1), CommStrategy::full_sync(), opts), full, true);
  check("local_sgd K=1 == full_sync",
        train(task, init, tc, Topology::strided(n, 1), CommStrategy::local_sgd(4), opts), full, true);

  const Topology groups = Topology::strided(K, K);
  check("grouped_sync unit groups == independent (batch b/K)",
        train(task, init, tc, groups, CommStrategy::grouped_sync(), opts),
        train(task, init, tc, groups, CommStrategy::independent(), opts), true);
  if (n != K) {
    check("grouped_sync == independent on " + std::to_string(n) + " devices",
          train(task, init, tc, config.topology, CommStrategy::grouped_sync(), opts),
          train(task, init, tc, config.topology, CommStrategy::independent(), opts), true);
  }

  TrainOptions seq = opts;
  seq.execution = Execution::Sequential;
  seq.ema_betas = config.ema_betas;
  seq.diversity = config.diversity;
  TrainOptions thr = seq;
  thr.execution = Execution::Threaded;
  const TrainConfig st = strategy_train(config, config.seeds.front());
  const RunResult a = train(task, init, st, config.topology, config.strategy, seq);
  const RunResult b = train(task, init, st, config.topology, config.strategy, thr);
  check("sequential == threaded (" + config.strategy.name() + ")", a, b, true);
  return checks;
}

// ---------------------------------------------------------------------------
// barrier-scan
// ---------------------------------------------------------------------------

BarrierReport barrier_report(const ExperimentConfig& config, const HarnessOptions& options) {
  config.validate();
  if (config.topology.num_groups < 2) throw ConfigError("topology.groups", "barrier scan needs >= 2 groups");
  const TaskBundle task = generate_task(config.task);
  const ParamVector init = finetune_init(task, pretrained_params(task, config, options), config);
  TrainOptions opts;
  opts.execution = options.execution;
  opts.eval_every_epoch = false;
  BarrierReport report;
  for (const auto seed : config.seeds) {
    const TrainConfig tc = strategy_train(config, seed);
    const RunResult r = train(task, init, tc, config.topology, config.strategy, opts);
    for (std::size_t a = 0; a < r.workers.size(); ++a) {
      for (std::size_t b = a + 1; b < r.workers.size(); ++b) {
        report.lofi.push_back({seed, a, b, barrier_scan(r.workers[a], r.workers[b], config.barrier_points, task.test_id)});
      }
    }

    // Same recipe, but each model starts from its own random init.
    const Topology one = Topology::strided(config.topology.num_devices, 1);
    TrainConfig rc = config.train;
    rc.seed = seed;
    const RunResult a = train(task, init_params(config.network, derive_seed(seed, {0x72616e64, 0})), rc, one,
                              CommStrategy::full_sync(), opts);
    const RunResult b = train(task, init_params(config.network, derive_seed(seed, {0x72616e64, 1})), rc, one,
                              CommStrategy::full_sync(), opts);
    report.random_init.push_back({seed, 0, 1, barrier_scan(a.merged, b.merged, config.barrier_points, task.test_id)});
  }
  return report;
}

fs::path write_barrier_report(const ExperimentConfig& config, const HarnessOptions& options) {
  const fs::path dir = options.out_root / ("barrier-" + config_hash(config));
  bool reused = false;
  publish_dir(dir, options.force, reused, [&](const fs::path& tmp) {
    const BarrierReport r = barrier_report(config, options);
    std::ostringstream csv;
    csv << "seed,pair,alpha,loss,accuracy\n";
    auto emit = [&](const std::string& pair, const PairScan& s) {
      for (const auto& p : s.scan.points) {
        csv << s.seed << ',' << pair << ',' << format_double(p.alpha) << ',' << format_double(p.loss) << ','
            << format_double(p.accuracy) << '\n';
      }
    };
    Json seeds = Json::array();
    for (const auto seed : config.seeds) {
      double worst = -INFINITY;
      Json pairs = Json::array();
      for (const auto& s : r.lofi) {
        if (s.seed != seed) continue;
        const std::string name = "lofi_" + std::to_string(s.a) + "_" + std::to_string(s.b);
        emit(name, s);
        pairs.push_back({{"pair", name}, {"barrier", s.scan.barrier}});
        worst = std::max(worst, s.scan.barrier);
      }
      double random = 0.0;
      for (const auto& s : r.random_init) {
        if (s.seed != seed) continue;
        emit("random_init", s);
        random = s.scan.barrier;
      }
      seeds.push_back({{"seed", seed}, {"lofi_pairs", pairs}, {"lofi_max_barrier", worst},
                       {"random_init_barrier", random}});
    }
    write_text(tmp / "barrier.csv", csv.str());
    write_json_file(tmp / "barrier.json", Json{{"points", config.barrier_points}, {"seeds", seeds}});
  });
  return dir;
}

}  // namespace lofi
