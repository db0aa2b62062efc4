// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lofi/errors.hpp"

namespace lofi {
namespace {

namespace fs = std::filesystem;

Json small_config() {
  return Json::parse(R"({
    "task": {"num_classes": 4, "input_dim": 6, "pretrain_size": 320, "finetune_size": 192, "test_size": 120},
    "network": {"hidden_dim": 8, "num_blocks": 2},
    "pretrain": {"epochs": 4, "global_batch": 16},
    "train": {"epochs": 2, "global_batch": 16},
    "topology": {"devices": 4, "groups": 4},
    "strategy": "independent",
    "ema": [0.9],
    "wise_ft": [0.5],
    "seeds": [0, 1],
    "barrier_points": 5
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

class HarnessTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("lofi_harness_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    options_.out_root = root_;
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path root_;
  HarnessOptions options_;
};

std::string field_of(const Json& j) {
  try {
    experiment_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

double aggregate(const Json& summary, const std::string& row, const std::string& split, const std::string& metric) {
  for (const auto& r : summary.at("aggregate")) {
    if (r.at("row") == row && r.at("split") == split && r.at("metric") == metric) return r.at("mean");
  }
  ADD_FAILURE() << "missing " << row << "/" << split << "/" << metric;
  return -1;
}

TEST(Fnv1a, KnownValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(ExperimentConfig, FieldPathErrors) {
  Json j = small_config();
  j["trian"] = 1;
  EXPECT_EQ(field_of(j), "trian");
  j = small_config();
  j["train"]["epochs"] = 0;
  EXPECT_EQ(field_of(j), "train.epochs");
  j = small_config();
  j["sweep"] = {{"bogus", Json::array({1})}};
  EXPECT_EQ(field_of(j), "sweep.bogus");
  j = small_config();
  j["seeds"] = Json::array();
  EXPECT_EQ(field_of(j), "seeds");
  j = small_config();
  j["head_init"] = "random";
  EXPECT_EQ(field_of(j), "head_init");
  j = small_config();
  j["diversity"] = {{"lambda", 0.5}, {"pairing", {0, 1, 2, 3}}};
  EXPECT_EQ(field_of(j).rfind("diversity", 0), 0u);
  j = small_config();
  j["train"]["global_batch"] = 18;
  EXPECT_NE(field_of(j), "<no error>");
}

TEST(ExperimentConfig, HashIsCanonical) {
  const auto a = experiment_from_json(small_config());
  Json reordered = Json::parse(dump_json(small_config()));
  reordered["output_dir"] = "elsewhere";
  const auto b = experiment_from_json(reordered);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(experiment_from_json(experiment_to_json(a))), config_hash(a));
  Json changed = small_config();
  changed["train"]["lr_base"] = 0.07;
  EXPECT_NE(config_hash(experiment_from_json(changed)), config_hash(a));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(ApplyAxis, Examples) {
  const auto base = experiment_from_json(small_config());
  const auto g = apply_axis(base, "groups", 2);
  EXPECT_EQ(g.topology.num_groups, 2u);
  EXPECT_EQ(g.topology.num_devices, 4u);
  EXPECT_EQ(apply_axis(base, "groups", 8).topology.num_devices, 8u);
  const auto n = apply_axis(base, "nodes", 8);
  EXPECT_EQ(n.topology.num_devices, 8u);
  EXPECT_EQ(n.baseline_device_count(), 4u);
  EXPECT_EQ(n.baseline_batch_size(), 16u);
  const auto l = apply_axis(base, "lambda", -0.5);
  ASSERT_TRUE(l.diversity.has_value());
  EXPECT_EQ(l.diversity->lambda, -0.5);
  EXPECT_EQ(apply_axis(base, "epochs", 3).train.epochs, 3u);
  EXPECT_EQ(apply_axis(base, "ema_beta", 0.5).ema_betas, std::vector<double>{0.5});
  EXPECT_THROW(apply_axis(base, "width", 2), ConfigError);
}

TEST_F(HarnessTest, RunWritesArtifactsAndReuses) {
  const auto config = experiment_from_json(small_config());
  const auto first = run_experiment(config, options_);
  EXPECT_FALSE(first.reused);
  EXPECT_EQ(first.dir, root_ / config_hash(config));
  for (const char* f : {"config.json", "init.json", "summary.json", "summary.csv", "seed_0/metrics.csv",
                        "seed_1/params/lofi_merged.json", "seed_1/params/baseline.json",
                        "seed_0/params/lofi_worker_3.json"}) {
    EXPECT_TRUE(fs::exists(first.dir / f)) << f;
  }
  const std::string metrics = slurp(first.dir / "seed_0" / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "run_id,epoch,worker_id,split,metric,value");
  EXPECT_EQ(slurp(first.dir / "summary.csv").rfind("row,split,metric,mean,min,max,seeds\n", 0), 0u);
  const auto before = tree(first.dir);

  const auto again = run_experiment(config, options_);
  EXPECT_TRUE(again.reused);
  EXPECT_EQ(tree(again.dir), before);

  options_.force = true;
  const auto forced = run_experiment(config, options_);
  EXPECT_FALSE(forced.reused);
  EXPECT_EQ(tree(forced.dir), before);
}

TEST_F(HarnessTest, SequentialMatchesThreadedBytes) {
  const auto config = experiment_from_json(small_config());
  options_.execution = Execution::Threaded;
  const auto threaded = tree(run_experiment(config, options_).dir);
  options_.out_root = root_ / "seq";
  options_.execution = Execution::Sequential;
  EXPECT_EQ(tree(run_experiment(config, options_).dir), threaded);
}

TEST_F(HarnessTest, FullSyncStrategyReproducesBaseline) {
  Json j = small_config();
  j["strategy"] = "full_sync";
  const auto summary = run_experiment(experiment_from_json(j), options_).summary;
  for (const char* split : {"test_id", "test_ood"}) {
    EXPECT_EQ(aggregate(summary, "lofi", split, "accuracy"), aggregate(summary, "baseline", split, "accuracy"));
    EXPECT_EQ(aggregate(summary, "lofi", split, "mcnemar_p"), 1.0);
  }
}

TEST_F(HarnessTest, SummaryRows) {
  const auto summary = run_experiment(experiment_from_json(small_config()), options_).summary;
  for (const char* row : {"baseline", "lofi", "lofi_individual", "lofi_ensemble", "ema_0.9_merged",
                          "ema_0.9_worker0", "wise_ft_0.5"}) {
    const double acc = aggregate(summary, row, "test_id", "accuracy");
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
  EXPECT_EQ(summary.at("seeds").size(), 2u);
}

TEST_F(HarnessTest, SingleValueSweep) {
  Json j = small_config();
  j["seeds"] = Json::array({0});
  j["sweep"] = {{"groups", Json::array({2})}};
  const auto dir = run_sweep(experiment_from_json(j), "groups", options_);
  const std::string csv = slurp(dir / "sweep.csv");
  EXPECT_NE(csv.find('\n'), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "sweep_long.csv"));
  EXPECT_THROW(run_sweep(experiment_from_json(j), "epochs", options_), ConfigError);
}

TEST_F(HarnessTest, EquivalenceChecksAllHold) {
  Json j = small_config();
  j["seeds"] = Json::array({3});
  for (const auto& check : verify_equivalence(experiment_from_json(j), options_)) {
    EXPECT_TRUE(check.identical) << check.name << ": " << check.detail;
  }
}

TEST_F(HarnessTest, BarrierReportShape) {
  const auto config = experiment_from_json(small_config());
  const auto report = barrier_report(config, options_);
  ASSERT_EQ(report.lofi.size(), 2u * 6u);
  EXPECT_EQ(report.lofi[1].a, 0u);
  EXPECT_EQ(report.lofi[1].b, 2u);
  EXPECT_EQ(report.lofi[6].seed, 1u);
  EXPECT_EQ(report.random_init.size(), 2u);
  const auto dir = write_barrier_report(config, options_);
  EXPECT_TRUE(fs::exists(dir / "barrier.csv"));
  EXPECT_TRUE(fs::exists(dir / "barrier.json"));
}

TEST_F(HarnessTest, CostReport) {
  CostStudy study;
  CostProfile p;
  p.id = "p";
  p.layers = {{0.1, 1e6}, {0.1, 1e6}};
  p.forward_seconds = 0.1;
  p.bandwidth = 1e8;
  study.profiles = {p};
  study.schedule.queue_wait = {{1, 10.0}, {4, 100.0}};
  study.iterations = 10;
  const auto dir = cost_report(study, options_);
  const std::string csv = slurp(dir / "cost.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCostHeader);
  EXPECT_TRUE(fs::exists(dir / "summary.json"));
}

}  // namespace
}  // namespace lofi
