// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#include "lofi/eval_stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "lofi/errors.hpp"

namespace lofi {

std::vector<int> predictions(const Matrix& scores) {
  std::vector<int> out(scores.rows);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    const auto row = scores.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<bool> correctness(const Matrix& scores, std::span<const int> labels) {
  if (labels.size() != scores.rows) {
    throw DimensionError("accuracy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(scores.rows) + " rows");
  }
  const auto pred = predictions(scores);
  std::vector<bool> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] == labels[i];
  return out;
}

double accuracy(const Matrix& scores, std::span<const int> labels) {
  const auto ok = correctness(scores, labels);
  if (ok.empty()) return 0.0;
  const auto hits = std::count(ok.begin(), ok.end(), true);
  return static_cast<double>(hits) / static_cast<double>(ok.size());
}

PairedOutcome PairedOutcome::tally(const std::vector<bool>& correct_a,
                                   const std::vector<bool>& correct_b) {
  if (correct_a.size() != correct_b.size()) throw DimensionError("PairedOutcome: size mismatch");
  PairedOutcome o;
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    if (correct_a[i]) {
      (correct_b[i] ? o.n11 : o.n10)++;
    } else {
      (correct_b[i] ? o.n01 : o.n00)++;
    }
  }
  return o;
}

McNemarResult mcnemar_exact(const PairedOutcome& outcome) {
  McNemarResult result;
  const std::size_t n = outcome.n01 + outcome.n10;
  result.discordant = n;
  if (n == 0) return result;
  const std::size_t m = std::max(outcome.n01, outcome.n10);

  // Upper tail P(X >= m), X ~ Bin(n, 1/2), summed smallest term first.
  double tail = 0.0;
  if (n <= 1000) {
    double term = std::ldexp(1.0, -static_cast<int>(n));  // P(X = n)
    for (std::size_t k = n;; --k) {
      tail += term;
      if (k == m) break;
      term *= static_cast<double>(k) / static_cast<double>(n - k + 1);
    }
  } else {
    const double nn = static_cast<double>(n);
    for (std::size_t k = n; k >= m; --k) {
      const double kk = static_cast<double>(k);
      tail += std::exp(std::lgamma(nn + 1) - std::lgamma(kk + 1) - std::lgamma(nn - kk + 1) -
                       nn * std::log(2.0));
      if (k == m) break;
    }
  }
  result.p_value = std::min(1.0, 2.0 * tail);
  return result;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

void check_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw std::invalid_argument("metrics: field '" + s + "' contains a CSV delimiter");
  }
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string metrics_csv(std::span<const MetricRecord> records) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const auto& r : records) {
    check_field(r.run_id);
    check_field(r.worker_id);
    check_field(r.split);
    check_field(r.metric);
    out += r.run_id + ',' + std::to_string(r.epoch) + ',' + r.worker_id + ',' + r.split + ',' +
           r.metric + ',' + format_double(r.value) + '\n';
  }
  return out;
}

void write_metrics(std::span<const MetricRecord> records, const std::filesystem::path& path) {
  const std::string text = metrics_csv(records);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_metrics: cannot open " + path.string());
  f << text;
  if (!f) throw IoError("write_metrics: write failed for " + path.string());
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_metrics: cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kMetricsHeader) {
    throw IoError("read_metrics: missing header in " + path.string());
  }
  std::vector<MetricRecord> out;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != 6) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    }
    MetricRecord r;
    r.run_id = fields[0];
    r.epoch = std::stoul(fields[1]);
    r.worker_id = fields[2];
    r.split = fields[3];
    r.metric = fields[4];
    const auto& v = fields[5];
    const auto res = std::from_chars(v.data(), v.data() + v.size(), r.value);
    if (res.ec != std::errc{}) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad value '" + v + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lofi
