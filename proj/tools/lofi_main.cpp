// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "lofi/errors.hpp"
#include "lofi/harness.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t pos = 0;
    try {
      seeds.push_back(std::stoull(item, &pos));
    } catch (const std::exception&) {
      pos = 0;
    }
    if (item.empty() || pos != item.size()) throw lofi::ConfigError("--seeds", "bad seed '" + item + "'");
  }
  if (seeds.empty()) throw lofi::ConfigError("--seeds", "empty list");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lofi: deterministic multi-worker fine-tuning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::string axis;
  bool force = false;
  bool sequential = false;

  auto common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "experiment JSON");
    if (needs_config) opt->required();
    cmd->add_option("--out", out_dir, "output root (default: config output_dir)");
    cmd->add_option("--seeds", seeds, "comma-separated seeds, replaces the config list");
    cmd->add_flag("--force", force, "recompute even if the artifact directory exists");
    cmd->add_flag("--sequential", sequential, "run devices on one thread");
  };
  auto* run = app.add_subcommand("run", "baseline vs strategy runs with summary report");
  common(run, true);
  auto* sweep = app.add_subcommand("sweep", "one run per value of an ablation axis");
  common(sweep, true);
  sweep->add_option("--axis", axis, "groups|nodes|ema_beta|wise_ft_alpha|lambda|epochs");
  auto* cost = app.add_subcommand("costreport", "communication cost grid for calibration profiles");
  common(cost, true);
  auto* verify = app.add_subcommand("verify-equivalence", "bitwise checks of degenerate strategy equalities");
  common(verify, true);
  auto* barrier = app.add_subcommand("barrier-scan", "loss along the line between every pair of workers");
  common(barrier, true);

  CLI11_PARSE(app, argc, argv);

  try {
    lofi::HarnessOptions options;
    options.force = force;
    options.execution = sequential ? lofi::Execution::Sequential : lofi::Execution::Threaded;

    if (cost->parsed()) {
      const auto study = lofi::load_cost_study(config_path);
      options.out_root = out_dir.empty() ? "out" : out_dir;
      std::cout << lofi::cost_report(study, options).string() << '\n';
      return 0;
    }

    auto config = lofi::load_experiment(config_path);
    if (!seeds.empty()) config.seeds = parse_seeds(seeds);
    config.validate();
    options.out_root = out_dir.empty() ? config.output_dir : out_dir;

    if (run->parsed()) {
      const auto result = lofi::run_experiment(config, options);
      std::cout << result.dir.string() << (result.reused ? " (cached)" : "") << '\n';
    } else if (sweep->parsed()) {
      std::vector<std::string> axes;
      if (!axis.empty()) {
        axes.push_back(axis);
      } else {
        for (const auto& [name, _] : config.sweep.items()) axes.push_back(name);
        if (axes.empty()) throw lofi::ConfigError("sweep", "no axis in config and no --axis given");
      }
      for (const auto& a : axes) std::cout << lofi::run_sweep(config, a, options).string() << '\n';
    } else if (verify->parsed()) {
      bool ok = true;
      for (const auto& c : lofi::verify_equivalence(config, options)) {
        std::cout << (c.identical ? "OK   " : "FAIL ") << c.name << ": " << c.detail << '\n';
        ok = ok && c.identical;
      }
      return ok ? 0 : 1;
    } else if (barrier->parsed()) {
      const auto dir = lofi::write_barrier_report(config, options);
      const auto report = lofi::read_json_file(dir / "barrier.json");
      for (const auto& s : report.at("seeds")) {
        std::printf("seed %llu  max lofi pair barrier %.6g  random-init barrier %.6g\n",
                    static_cast<unsigned long long>(s.at("seed").get<std::uint64_t>()),
                    s.at("lofi_max_barrier").get<double>(), s.at("random_init_barrier").get<double>());
      }
      std::cout << dir.string() << '\n';
    }
  } catch (const lofi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
