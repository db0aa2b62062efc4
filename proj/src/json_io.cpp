// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/json_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "lofi/errors.hpp"

namespace lofi {

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
}

std::string dump_json(const Json& value) { return value.dump(2) + "\n"; }

void write_json_file(const std::filesystem::path& path, const Json& value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << dump_json(value);
  if (!out) throw IoError("write failed: " + path.string());
}

namespace cfg {

std::string join(std::string_view path, std::string_view key) {
  if (path.empty()) return std::string(key);
  return std::string(path) + "." + std::string(key);
}

const Json& object(const Json& j, std::string_view path) {
  if (!j.is_object()) throw ConfigError(std::string(path), "expected an object");
  return j;
}

void only_keys(const Json& j, std::string_view path, std::initializer_list<std::string_view> allowed) {
  object(j, path);
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const auto a : allowed) known = known || a == key;
    if (!known) throw ConfigError(join(path, key), "unknown field");
  }
}

namespace {

const Json* find(const Json& j, std::string_view path, std::string_view key) {
  object(j, path);
  const auto it = j.find(std::string(key));
  return it == j.end() ? nullptr : &*it;
}

bool nonnegative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

}  // namespace

double number(const Json& j, std::string_view path, std::string_view key, double fallback) {
  const Json* v = find(j, path, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
  const double x = v->get<double>();
  if (!std::isfinite(x)) throw ConfigError(join(path, key), "must be finite");
  return x;
}

std::size_t count(const Json& j, std::string_view path, std::string_view key, std::size_t fallback) {
  const Json* v = find(j, path, key);
  if (!v) return fallback;
  if (!nonnegative_integer(*v)) throw ConfigError(join(path, key), "expected a nonnegative integer");
  return v->get<std::size_t>();
}

std::uint64_t seed(const Json& j, std::string_view path, std::string_view key, std::uint64_t fallback) {
  const Json* v = find(j, path, key);
  if (!v) return fallback;
  if (!nonnegative_integer(*v)) throw ConfigError(join(path, key), "expected a nonnegative integer");
  return v->get<std::uint64_t>();
}

bool flag(const Json& j, std::string_view path, std::string_view key, bool fallback) {
  const Json* v = find(j, path, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v->get<bool>();
}

std::string text(const Json& j, std::string_view path, std::string_view key, std::string fallback) {
  const Json* v = find(j, path, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
  return v->get<std::string>();
}

std::vector<double> numbers(const Json& j, std::string_view path, std::string_view key) {
  const Json* v = find(j, path, key);
  if (!v) return {};
  if (!v->is_array()) throw ConfigError(join(path, key), "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const Json& e = (*v)[i];
    const std::string where = join(path, key) + "[" + std::to_string(i) + "]";
    if (!e.is_number()) throw ConfigError(where, "expected a number");
    out.push_back(e.get<double>());
    if (!std::isfinite(out.back())) throw ConfigError(where, "must be finite");
  }
  return out;
}

std::vector<std::size_t> counts(const Json& j, std::string_view path, std::string_view key) {
  const Json* v = find(j, path, key);
  if (!v) return {};
  if (!v->is_array()) throw ConfigError(join(path, key), "expected an array of integers");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const Json& e = (*v)[i];
    if (!nonnegative_integer(e)) {
      throw ConfigError(join(path, key) + "[" + std::to_string(i) + "]", "expected a nonnegative integer");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

}  // namespace cfg

// --- task -------------------------------------------------------------------

namespace {

const char* shift_name(ShiftKind k) {
  switch (k) {
    case ShiftKind::Rotation: return "rotation";
    case ShiftKind::Noise: return "noise";
    case ShiftKind::Scale: return "scale";
  }
  return "rotation";
}

Json matrix_to_json(const Matrix& m) {
  return Json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const Json& j) {
  Matrix m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw LayoutError("matrix data does not match its shape");
  return m;
}

Json dataset_to_json(const Dataset& d) {
  return Json{{"inputs", matrix_to_json(d.inputs)}, {"labels", d.labels}};
}

Dataset dataset_from_json(const Json& j) {
  Dataset d{matrix_from_json(j.at("inputs")), j.at("labels").get<std::vector<int>>()};
  if (d.labels.size() != d.inputs.rows) throw LayoutError("dataset labels do not match its rows");
  return d;
}

}  // namespace

Json task_spec_to_json(const TaskSpec& s) {
  return Json{{"num_classes", s.num_classes},
              {"input_dim", s.input_dim},
              {"cluster_spread", s.cluster_spread},
              {"domain_gap", s.domain_gap},
              {"pretrain_size", s.pretrain_size},
              {"finetune_size", s.finetune_size},
              {"test_size", s.test_size},
              {"shift", {{"kind", shift_name(s.shift.kind)},
                         {"magnitude", s.shift.magnitude},
                         {"seed", s.shift.seed}}},
              {"seed", s.seed}};
}

TaskSpec task_spec_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"num_classes", "input_dim", "cluster_spread", "domain_gap", "pretrain_size",
                           "finetune_size", "test_size", "shift", "seed"});
  TaskSpec s;
  s.num_classes = cfg::count(j, path, "num_classes", s.num_classes);
  s.input_dim = cfg::count(j, path, "input_dim", s.input_dim);
  s.cluster_spread = cfg::number(j, path, "cluster_spread", s.cluster_spread);
  s.domain_gap = cfg::number(j, path, "domain_gap", s.domain_gap);
  s.pretrain_size = cfg::count(j, path, "pretrain_size", s.pretrain_size);
  s.finetune_size = cfg::count(j, path, "finetune_size", s.finetune_size);
  s.test_size = cfg::count(j, path, "test_size", s.test_size);
  s.seed = cfg::seed(j, path, "seed", s.seed);
  if (j.contains("shift")) {
    const std::string sp = cfg::join(path, "shift");
    const Json& sh = j.at("shift");
    cfg::only_keys(sh, sp, {"kind", "magnitude", "seed"});
    const std::string kind = cfg::text(sh, sp, "kind", shift_name(s.shift.kind));
    if (kind == "rotation") {
      s.shift.kind = ShiftKind::Rotation;
    } else if (kind == "noise") {
      s.shift.kind = ShiftKind::Noise;
    } else if (kind == "scale") {
      s.shift.kind = ShiftKind::Scale;
    } else {
      throw ConfigError(cfg::join(sp, "kind"), "expected rotation, noise or scale");
    }
    s.shift.magnitude = cfg::number(sh, sp, "magnitude", s.shift.magnitude);
    s.shift.seed = cfg::seed(sh, sp, "seed", s.shift.seed);
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw e.within(std::string(path));
  }
  return s;
}

Json task_to_json(const TaskBundle& t) {
  return Json{{"spec", task_spec_to_json(t.spec)},
              {"pretrain", dataset_to_json(t.pretrain)},
              {"finetune_train", dataset_to_json(t.finetune_train)},
              {"test_id", dataset_to_json(t.test_id)},
              {"test_ood", dataset_to_json(t.test_ood)},
              {"class_map", t.class_map}};
}

TaskBundle task_from_json(const Json& j) {
  try {
    TaskBundle t;
    t.spec = task_spec_from_json(j.at("spec"), "spec");
    t.pretrain = dataset_from_json(j.at("pretrain"));
    t.finetune_train = dataset_from_json(j.at("finetune_train"));
    t.test_id = dataset_from_json(j.at("test_id"));
    t.test_ood = dataset_from_json(j.at("test_ood"));
    t.class_map = j.at("class_map").get<std::vector<int>>();
    return t;
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed task bundle: ") + e.what());
  }
}

// --- network / params ---------------------------------------------------------

Json network_to_json(const NetworkConfig& c) {
  return Json{{"input_dim", c.input_dim},
              {"hidden_dim", c.hidden_dim},
              {"num_blocks", c.num_blocks},
              {"num_classes", c.num_classes},
              {"drop_prob", c.drop_prob}};
}

NetworkConfig network_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"input_dim", "hidden_dim", "num_blocks", "num_classes", "drop_prob"});
  NetworkConfig c;
  c.input_dim = cfg::count(j, path, "input_dim", c.input_dim);
  c.hidden_dim = cfg::count(j, path, "hidden_dim", c.hidden_dim);
  c.num_blocks = cfg::count(j, path, "num_blocks", c.num_blocks);
  c.num_classes = cfg::count(j, path, "num_classes", c.num_classes);
  c.drop_prob = cfg::number(j, path, "drop_prob", c.drop_prob);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw e.within(std::string(path));
  }
  return c;
}

Json params_to_json(const ParamVector& p) {
  Json j{{"values", std::vector<double>(p.values().begin(), p.values().end())}};
  if (p.config()) j["network"] = network_to_json(*p.config());
  return j;
}

ParamVector params_from_json(const Json& j) {
  auto values = j.at("values").get<std::vector<double>>();
  if (!j.contains("network")) return ParamVector(std::move(values));
  return ParamVector(network_from_json(j.at("network")), std::move(values));
}

// --- train / strategy / topology -------------------------------------------

namespace {

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::SgdMomentum: return "momentum";
    case OptimizerKind::AdamW: return "adamw";
  }
  return "momentum";
}

}  // namespace

Json train_to_json(const TrainConfig& c) {
  const auto& o = c.optimizer;
  return Json{{"lr_base", c.lr_base},
              {"epochs", c.epochs},
              {"global_batch", c.global_batch},
              {"drop_prob", c.drop_prob},
              {"schedule", c.schedule == LrSchedule::Constant ? "constant" : "cosine"},
              {"seed", c.seed},
              {"optimizer", {{"kind", optimizer_name(o.kind)},
                             {"momentum", o.momentum},
                             {"beta1", o.beta1},
                             {"beta2", o.beta2},
                             {"eps", o.eps},
                             {"weight_decay", o.weight_decay}}}};
}

TrainConfig train_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"lr_base", "epochs", "global_batch", "drop_prob", "schedule", "seed", "optimizer"});
  TrainConfig c;
  c.lr_base = cfg::number(j, path, "lr_base", c.lr_base);
  c.epochs = cfg::count(j, path, "epochs", c.epochs);
  c.global_batch = cfg::count(j, path, "global_batch", c.global_batch);
  c.drop_prob = cfg::number(j, path, "drop_prob", c.drop_prob);
  c.seed = cfg::seed(j, path, "seed", c.seed);
  const std::string schedule = cfg::text(j, path, "schedule", "cosine");
  if (schedule == "cosine") {
    c.schedule = LrSchedule::CosinePerIteration;
  } else if (schedule == "constant") {
    c.schedule = LrSchedule::Constant;
  } else {
    throw ConfigError(cfg::join(path, "schedule"), "expected cosine or constant");
  }
  if (j.contains("optimizer")) {
    const std::string op = cfg::join(path, "optimizer");
    const Json& o = j.at("optimizer");
    cfg::only_keys(o, op, {"kind", "momentum", "beta1", "beta2", "eps", "weight_decay"});
    auto& oc = c.optimizer;
    const std::string kind = cfg::text(o, op, "kind", optimizer_name(oc.kind));
    if (kind == "sgd") {
      oc.kind = OptimizerKind::Sgd;
    } else if (kind == "momentum") {
      oc.kind = OptimizerKind::SgdMomentum;
    } else if (kind == "adamw") {
      oc.kind = OptimizerKind::AdamW;
    } else {
      throw ConfigError(cfg::join(op, "kind"), "expected sgd, momentum or adamw");
    }
    oc.momentum = cfg::number(o, op, "momentum", oc.momentum);
    oc.beta1 = cfg::number(o, op, "beta1", oc.beta1);
    oc.beta2 = cfg::number(o, op, "beta2", oc.beta2);
    oc.eps = cfg::number(o, op, "eps", oc.eps);
    oc.weight_decay = cfg::number(o, op, "weight_decay", oc.weight_decay);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(cfg::join(path, e.field().substr(e.field().find('.') + 1)), e.message());
  }
  return c;
}

Json strategy_to_json(const CommStrategy& s) {
  Json j{{"kind", s.name()}};
  if (s.kind == StrategyKind::LocalSgd) j["period"] = s.period;
  if (s.kind == StrategyKind::Independent) j["data_groups"] = s.data_groups;
  return j;
}

CommStrategy strategy_from_json(const Json& j, std::string_view path) {
  if (j.is_string()) return strategy_from_json(Json{{"kind", j}}, path);
  cfg::only_keys(j, path, {"kind", "period", "data_groups"});
  const std::string kind = cfg::text(j, path, "kind", "independent");
  CommStrategy s;
  if (kind == "full_sync") {
    s = CommStrategy::full_sync();
  } else if (kind == "grouped_sync") {
    s = CommStrategy::grouped_sync();
  } else if (kind == "independent") {
    s = CommStrategy::independent(cfg::count(j, path, "data_groups", 0));
  } else if (kind == "local_sgd") {
    s = CommStrategy::local_sgd(cfg::count(j, path, "period", 1));
    if (s.period == 0) throw ConfigError(cfg::join(path, "period"), "must be >= 1");
  } else {
    throw ConfigError(cfg::join(path, "kind"),
                      "expected full_sync, grouped_sync, independent or local_sgd");
  }
  return s;
}

Json topology_to_json(const Topology& t) {
  return Json{{"devices", t.num_devices}, {"groups", t.num_groups}, {"group_of", t.group_of}};
}

Topology topology_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"devices", "groups", "layout", "group_of"});
  const std::size_t n = cfg::count(j, path, "devices", 4);
  const std::size_t k = cfg::count(j, path, "groups", n);
  try {
    if (j.contains("group_of")) {
      Topology t{n, k, cfg::counts(j, path, "group_of")};
      t.validate();
      return t;
    }
    const std::string layout = cfg::text(j, path, "layout", "strided");
    if (layout == "strided") return Topology::strided(n, k);
    if (layout == "contiguous") return Topology::contiguous(n, k);
  } catch (const ConfigError& e) {
    throw ConfigError(cfg::join(path, e.field().substr(e.field().find('.') + 1)), e.message());
  }
  throw ConfigError(cfg::join(path, "layout"), "expected strided or contiguous");
}

}  // namespace lofi
