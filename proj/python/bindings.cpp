// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lofi/costmodel.hpp"
#include "lofi/errors.hpp"
#include "lofi/eval_stats.hpp"
#include "lofi/harness.hpp"
#include "lofi/nn.hpp"
#include "lofi/weight_space.hpp"

namespace py = pybind11;
using namespace lofi;

// Structured values cross the boundary as JSON text; the Python package wraps
// them in dicts.
namespace {

HarnessOptions harness_options(const std::string& out_root, bool force, bool sequential) {
  HarnessOptions o;
  o.out_root = out_root;
  o.force = force;
  o.execution = sequential ? Execution::Sequential : Execution::Threaded;
  return o;
}

ExperimentConfig parse_config(const std::string& config_json) {
  return experiment_from_json(Json::parse(config_json));
}

ParamVector to_params(const std::vector<double>& v) { return ParamVector(v); }

std::vector<double> to_list(const ParamVector& p) { return {p.values().begin(), p.values().end()}; }

}  // namespace

PYBIND11_MODULE(_lofi, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("mcnemar_exact", [](std::size_t n00, std::size_t n01, std::size_t n10, std::size_t n11) {
    return mcnemar_exact({n00, n01, n10, n11}).p_value;
  }, py::arg("n00"), py::arg("n01"), py::arg("n10"), py::arg("n11"));

  m.def("overhead_percent", &overhead_percent, py::arg("t_multi"), py::arg("t_single"));

  m.def("simulate_iteration", [](const std::string& profile_json, bool overlap, bool sync) {
    return simulate_iteration(profile_from_json(Json::parse(profile_json)), overlap,
                              sync ? SyncMode::CrossNode : SyncMode::None);
  }, py::arg("profile_json"), py::arg("overlap"), py::arg("sync") = true);

  m.def("cost_grid", [](const std::string& study_json) {
    std::vector<CostRow> rows = cost_grid(cost_study_from_json(Json::parse(study_json)));
    return cost_csv(rows);
  }, py::arg("study_json"));

  m.def("ema", [](const std::vector<std::vector<double>>& stream, double decay) {
    if (stream.empty()) throw py::value_error("ema: empty stream");
    EmaState s = EmaState::start(decay, to_params(stream.front()));
    for (const auto& v : stream) s = ema_update(s, to_params(v));
    return py::make_tuple(to_list(s.accum), to_list(ema_debias(s)));
  }, py::arg("stream"), py::arg("decay"));

  m.def("wise_ft", [](const std::vector<double>& init, const std::vector<double>& ft, double alpha) {
    return to_list(wise_ft(to_params(init), to_params(ft), InterpolationCoefficient(alpha)));
  }, py::arg("init"), py::arg("finetuned"), py::arg("alpha"));

  m.def("uniform_average", [](const std::vector<std::vector<double>>& models) {
    std::vector<ParamVector> p;
    for (const auto& v : models) p.push_back(to_params(v));
    return to_list(uniform_average(p));
  }, py::arg("models"));

  m.def("init_params", [](const std::string& network_json, std::uint64_t seed) {
    return to_list(init_params(network_from_json(Json::parse(network_json)), seed));
  }, py::arg("network_json"), py::arg("seed"));

  m.def("loss_and_grad", [](const std::string& network_json, const std::vector<double>& params,
                            const std::vector<std::vector<double>>& inputs, const std::vector<int>& labels) {
    const NetworkConfig net = network_from_json(Json::parse(network_json));
    ParamVector p(net, params);
    Batch b;
    b.inputs = Matrix(inputs.size(), net.input_dim);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].size() != net.input_dim) throw py::value_error("loss_and_grad: row width != input_dim");
      std::copy(inputs[i].begin(), inputs[i].end(), b.inputs.row(i).begin());
      b.ids.push_back(i);
    }
    b.labels = labels;
    const auto r = loss_and_grad(p, b, ForwardMode::eval());
    return py::make_tuple(r.loss, to_list(r.grad));
  }, py::arg("network_json"), py::arg("params"), py::arg("inputs"), py::arg("labels"));

  m.def("config_hash", [](const std::string& config_json) { return config_hash(parse_config(config_json)); },
        py::arg("config_json"));

  m.def("run_experiment", [](const std::string& config_json, const std::string& out_root, bool force,
                             bool sequential) {
    RunArtifacts a;
    {
      py::gil_scoped_release release;
      a = run_experiment(parse_config(config_json), harness_options(out_root, force, sequential));
    }
    return py::make_tuple(a.dir.string(), a.reused, dump_json(a.summary));
  }, py::arg("config_json"), py::arg("out_root"), py::arg("force") = false, py::arg("sequential") = false);

  m.def("verify_equivalence", [](const std::string& config_json, const std::string& out_root) {
    std::vector<EquivalenceCheck> checks;
    {
      py::gil_scoped_release release;
      checks = verify_equivalence(parse_config(config_json), harness_options(out_root, false, false));
    }
    py::list out;
    for (const auto& c : checks) out.append(py::make_tuple(c.name, c.identical, c.detail));
    return out;
  }, py::arg("config_json"), py::arg("out_root"));

  m.def("barrier_scan", [](const std::string& config_json, const std::string& out_root) {
    std::filesystem::path dir;
    {
      py::gil_scoped_release release;
      dir = write_barrier_report(parse_config(config_json), harness_options(out_root, false, false));
    }
    return dir.string();
  }, py::arg("config_json"), py::arg("out_root"));

  m.def("run_sweep", [](const std::string& config_json, const std::string& axis, const std::string& out_root) {
    std::filesystem::path dir;
    {
      py::gil_scoped_release release;
      dir = run_sweep(parse_config(config_json), axis, harness_options(out_root, false, false));
    }
    return dir.string();
  }, py::arg("config_json"), py::arg("axis"), py::arg("out_root"));
}
