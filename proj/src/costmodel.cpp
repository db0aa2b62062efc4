// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lofi/errors.hpp"
#include "lofi/eval_stats.hpp"
#include "lofi/random.hpp"

namespace lofi {

void CostProfile::validate() const {
  if (layers.empty()) throw ConfigError("layers", "need at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string at = "layers[" + std::to_string(i) + "]";
    if (!(l.backward_seconds >= 0.0) || !std::isfinite(l.backward_seconds)) {
      throw ConfigError(at + ".backward_seconds", "must be finite and >= 0");
    }
    if (!(l.gradient_bytes >= 0.0) || !std::isfinite(l.gradient_bytes)) {
      throw ConfigError(at + ".gradient_bytes", "must be finite and >= 0");
    }
  }
  if (!(forward_seconds >= 0.0) || !std::isfinite(forward_seconds)) {
    throw ConfigError("forward_seconds", "must be finite and >= 0");
  }
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ConfigError("bandwidth", "must be finite and > 0");
  if (!(latency >= 0.0) || !std::isfinite(latency)) throw ConfigError("latency", "must be finite and >= 0");
  if (!(bucket_bytes >= 0.0) || !std::isfinite(bucket_bytes)) {
    throw ConfigError("bucket_bytes", "must be finite and >= 0");
  }
}

double CostProfile::compute_seconds() const {
  double t = forward_seconds;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) t += it->backward_seconds;
  return t;
}

double CostProfile::total_bytes() const {
  double b = 0.0;
  for (const auto& l : layers) b += l.gradient_bytes;
  return b;
}

CostProfile CostProfile::scaled(double factor) const {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw std::invalid_argument("scaled: factor must be > 0");
  CostProfile p = *this;
  p.forward_seconds *= factor;
  for (auto& l : p.layers) l.backward_seconds *= factor;
  return p;
}

std::vector<std::vector<std::size_t>> make_buckets(const CostProfile& profile) {
  std::vector<std::vector<std::size_t>> buckets;
  double filled = 0.0;
  for (std::size_t i = profile.layers.size(); i-- > 0;) {
    const double b = profile.layers[i].gradient_bytes;
    const bool fits = profile.bucket_bytes > 0.0 && !buckets.empty() && filled + b <= profile.bucket_bytes;
    if (!fits) {
      buckets.emplace_back();
      filled = 0.0;
    }
    buckets.back().push_back(i);
    filled += b;
  }
  return buckets;
}

double simulate_iteration(const CostProfile& profile, bool overlap, SyncMode sync) {
  profile.validate();
  const auto buckets = make_buckets(profile);
  double compute = profile.forward_seconds;
  if (sync == SyncMode::None) return profile.compute_seconds();
  if (!overlap) {
    double comm = 0.0;
    for (const auto& bucket : buckets) {
      double bytes = 0.0;
      for (const auto i : bucket) bytes += profile.layers[i].gradient_bytes;
      comm += profile.message_seconds(bytes);
    }
    return profile.compute_seconds() + comm;
  }
  // Buckets hold consecutive layers in backward order, so a bucket is ready
  // when its last layer finishes.
  double network_free = 0.0;
  for (const auto& bucket : buckets) {
    double bytes = 0.0;
    for (const auto i : bucket) {
      compute += profile.layers[i].backward_seconds;
      bytes += profile.layers[i].gradient_bytes;
    }
    network_free = std::max(network_free, compute) + profile.message_seconds(bytes);
  }
  return std::max(compute, network_free);
}

double overhead_percent(double t_multi, double t_single) {
  if (!(t_single > 0.0)) throw std::invalid_argument("overhead_percent: t_single must be > 0");
  return 100.0 * (t_multi - t_single) / t_single;
}

void JitterSpec::validate() const {
  switch (kind) {
    case JitterKind::None: break;
    case JitterKind::LogNormal:
      if (!std::isfinite(mu)) throw ConfigError("mu", "must be finite");
      if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma", "must be finite and >= 0");
      break;
    case JitterKind::FixedStraggler:
      if (!(factor >= 1.0) || !std::isfinite(factor)) throw ConfigError("factor", "must be finite and >= 1");
      break;
  }
}

std::vector<std::vector<double>> JitterSpec::draw(std::size_t nodes, std::size_t iterations,
                                                  std::uint64_t seed) const {
  validate();
  std::vector<std::vector<double>> s(nodes, std::vector<double>(iterations, 1.0));
  for (std::size_t n = 0; n < nodes; ++n) {
    if (kind == JitterKind::FixedStraggler && n == node) std::fill(s[n].begin(), s[n].end(), factor);
    if (kind != JitterKind::LogNormal) continue;
    Rng rng(derive_seed(seed, {0x6a6974, n}));
    for (auto& v : s[n]) v = 1.0 + std::exp(mu + sigma * rng.normal());
  }
  return s;
}

double simulate_run_time(const CostProfile& profile, const JitterSpec& jitter,
                         const CommStrategy& strategy, const Topology& topology,
                         std::size_t iterations, std::uint64_t seed, bool overlap) {
  if (iterations < 1) throw std::invalid_argument("simulate_run_time: iterations must be >= 1");
  profile.validate();
  topology.validate();
  const std::size_t nodes = topology.num_devices;
  const auto slow = jitter.draw(nodes, iterations, seed);

  // Iteration time depends on the slowdown only through compute; cache by value.
  std::map<std::pair<double, bool>, double> cache;
  auto iteration = [&](double slowdown, bool cross) {
    const auto key = std::make_pair(slowdown, cross);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const double t = simulate_iteration(profile.scaled(slowdown), overlap,
                                        cross ? SyncMode::CrossNode : SyncMode::None);
    cache.emplace(key, t);
    return t;
  };
  const double final_reduce = profile.message_seconds(profile.total_bytes());

  if (strategy.kind == StrategyKind::FullSync || topology.num_groups == 1) {
    const bool cross = nodes > 1;
    double total = 0.0;
    for (std::size_t t = 0; t < iterations; ++t) {
      double worst = 0.0;
      for (std::size_t n = 0; n < nodes; ++n) worst = std::max(worst, iteration(slow[n][t], cross));
      total += worst;
    }
    return total;
  }

  const auto members = topology.members();
  auto group_time = [&](const std::vector<std::size_t>& group, std::size_t begin, std::size_t end) {
    const bool cross = group.size() > 1;
    double total = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
      double worst = 0.0;
      for (const auto n : group) worst = std::max(worst, iteration(slow[n][t], cross));
      total += worst;
    }
    return total;
  };

  if (strategy.kind == StrategyKind::LocalSgd && strategy.period > 1) {
    double total = 0.0;
    for (std::size_t begin = 0; begin < iterations; begin += strategy.period) {
      const std::size_t end = std::min(iterations, begin + strategy.period);
      double worst = 0.0;
      for (const auto& g : members) worst = std::max(worst, group_time(g, begin, end));
      total += worst + final_reduce;
    }
    return total;
  }
  if (strategy.kind == StrategyKind::LocalSgd) {
    return simulate_run_time(profile, jitter, CommStrategy::full_sync(), topology, iterations, seed,
                             overlap);
  }
  double worst = 0.0;
  for (const auto& g : members) worst = std::max(worst, group_time(g, 0, iterations));
  return worst + final_reduce;
}

double time_to_result(const ScheduleEstimate& estimate, std::size_t nodes_per_job, std::size_t jobs) {
  if (jobs < 1) throw std::invalid_argument("time_to_result: jobs must be >= 1");
  if (!(estimate.run_time >= 0.0)) throw ConfigError("run_time", "must be >= 0");
  const auto samples = estimate.wait_samples.find(nodes_per_job);
  if (samples != estimate.wait_samples.end() && samples->second.size() >= jobs) {
    const auto& w = samples->second;
    return *std::max_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(jobs)) +
           estimate.run_time;
  }
  const auto it = estimate.queue_wait.find(nodes_per_job);
  if (it == estimate.queue_wait.end()) {
    throw ConfigError("queue_wait." + std::to_string(nodes_per_job), "no entry for this node count");
  }
  return it->second + estimate.run_time;
}

std::string cost_csv(std::span<const CostRow> rows) {
  std::ostringstream out;
  out << kCostHeader << '\n';
  for (const auto& r : rows) {
    out << r.profile_id << ',' << r.strategy << ',' << (r.overlap ? "true" : "false") << ','
        << format_double(r.batch_factor) << ',' << format_double(r.seconds) << ','
        << format_double(r.overhead_percent) << '\n';
  }
  return out.str();
}

// --- JSON ---------------------------------------------------------------------

CostProfile profile_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"id", "note", "layers", "uniform", "forward_seconds", "bandwidth",
                           "latency", "bucket_bytes"});
  CostProfile p;
  p.id = cfg::text(j, path, "id", "profile");
  p.forward_seconds = cfg::number(j, path, "forward_seconds", 0.0);
  p.bandwidth = cfg::number(j, path, "bandwidth", 1.0);
  p.latency = cfg::number(j, path, "latency", 0.0);
  p.bucket_bytes = cfg::number(j, path, "bucket_bytes", 0.0);
  if (j.contains("layers")) {
    const std::string lp = cfg::join(path, "layers");
    if (!j.at("layers").is_array()) throw ConfigError(lp, "expected an array");
    for (std::size_t i = 0; i < j.at("layers").size(); ++i) {
      const std::string at = lp + "[" + std::to_string(i) + "]";
      const Json& l = j.at("layers")[i];
      cfg::only_keys(l, at, {"backward_seconds", "gradient_bytes"});
      p.layers.push_back({cfg::number(l, at, "backward_seconds", 0.0),
                          cfg::number(l, at, "gradient_bytes", 0.0)});
    }
  }
  if (j.contains("uniform")) {
    const std::string up = cfg::join(path, "uniform");
    const Json& u = j.at("uniform");
    cfg::only_keys(u, up, {"count", "backward_seconds", "gradient_bytes"});
    const LayerCost layer{cfg::number(u, up, "backward_seconds", 0.0),
                          cfg::number(u, up, "gradient_bytes", 0.0)};
    p.layers.insert(p.layers.end(), cfg::count(u, up, "count", 1), layer);
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw e.within(std::string(path));
  }
  return p;
}

JitterSpec jitter_from_json(const Json& j, std::string_view path) {
  cfg::only_keys(j, path, {"kind", "mu", "sigma", "node", "factor"});
  JitterSpec s;
  const std::string kind = cfg::text(j, path, "kind", "none");
  if (kind == "none") {
    s.kind = JitterKind::None;
  } else if (kind == "lognormal") {
    s.kind = JitterKind::LogNormal;
  } else if (kind == "fixed_straggler") {
    s.kind = JitterKind::FixedStraggler;
  } else {
    throw ConfigError(cfg::join(path, "kind"), "expected none, lognormal or fixed_straggler");
  }
  s.mu = cfg::number(j, path, "mu", 0.0);
  s.sigma = cfg::number(j, path, "sigma", 0.0);
  s.node = cfg::count(j, path, "node", 0);
  s.factor = cfg::number(j, path, "factor", 1.0);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw e.within(std::string(path));
  }
  return s;
}

namespace {

std::size_t node_key(const std::string& key, const std::string& path) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(key, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != key.size() || v == 0) throw ConfigError(path + "." + key, "keys must be node counts >= 1");
  return v;
}

}  // namespace

CostStudy cost_study_from_json(const Json& j) {
  // A bare profile is a study with one profile.
  if (j.is_object() && !j.contains("profiles")) {
    CostStudy s;
    s.profiles.push_back(profile_from_json(j));
    return s;
  }
  cfg::only_keys(j, "", {"profiles", "jitter", "queue_wait", "wait_samples", "nodes", "iterations",
                         "batch_factors", "seed", "note"});
  CostStudy s;
  if (!j.at("profiles").is_array() || j.at("profiles").empty()) {
    throw ConfigError("profiles", "expected a nonempty array");
  }
  for (std::size_t i = 0; i < j.at("profiles").size(); ++i) {
    s.profiles.push_back(profile_from_json(j.at("profiles")[i], "profiles[" + std::to_string(i) + "]"));
  }
  if (j.contains("jitter")) s.jitter = jitter_from_json(j.at("jitter"));
  if (j.contains("queue_wait")) {
    cfg::object(j.at("queue_wait"), "queue_wait");
    for (const auto& [key, value] : j.at("queue_wait").items()) {
      const double w = cfg::number(j.at("queue_wait"), "queue_wait", key, 0.0);
      if (w < 0.0) throw ConfigError("queue_wait." + key, "must be >= 0");
      s.schedule.queue_wait[node_key(key, "queue_wait")] = w;
      (void)value;
    }
  }
  if (j.contains("wait_samples")) {
    cfg::object(j.at("wait_samples"), "wait_samples");
    for (const auto& [key, value] : j.at("wait_samples").items()) {
      (void)value;
      s.schedule.wait_samples[node_key(key, "wait_samples")] =
          cfg::numbers(j.at("wait_samples"), "wait_samples", key);
    }
  }
  s.nodes = cfg::count(j, "", "nodes", s.nodes);
  s.iterations = cfg::count(j, "", "iterations", s.iterations);
  s.seed = cfg::seed(j, "", "seed", s.seed);
  if (j.contains("batch_factors")) s.batch_factors = cfg::numbers(j, "", "batch_factors");
  if (s.nodes < 1) throw ConfigError("nodes", "must be >= 1");
  if (s.iterations < 1) throw ConfigError("iterations", "must be >= 1");
  for (const double f : s.batch_factors) {
    if (!(f > 0.0)) throw ConfigError("batch_factors", "must be > 0");
  }
  return s;
}

CostStudy load_cost_study(const std::filesystem::path& path) { return cost_study_from_json(read_json_file(path)); }

std::vector<CostRow> cost_grid(const CostStudy& study) {
  std::vector<CostRow> rows;
  const Topology one_group = Topology::strided(study.nodes, 1);
  const Topology per_node = Topology::strided(study.nodes, study.nodes);
  const JitterSpec none;
  for (const auto& base : study.profiles) {
    for (const double factor : study.batch_factors) {
      const CostProfile p = base.scaled(factor);
      const double single = static_cast<double>(study.iterations) * simulate_iteration(p, true, SyncMode::None);
      for (const bool overlap : {false, true}) {
        const double full = simulate_run_time(p, none, CommStrategy::full_sync(), one_group,
                                              study.iterations, study.seed, overlap);
        const double lofi = simulate_run_time(p, none, CommStrategy::independent(), per_node,
                                              study.iterations, study.seed, overlap);
        rows.push_back({base.id, "full_sync", overlap, factor, full, overhead_percent(full, single)});
        rows.push_back({base.id, "independent", overlap, factor, lofi, overhead_percent(lofi, single)});
      }
    }
  }
  return rows;
}

}  // namespace lofi
