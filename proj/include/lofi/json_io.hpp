// Copyright 2026 The lofi Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lofi/data.hpp"
#include "lofi/engine.hpp"
#include "lofi/nn.hpp"

namespace lofi {

using Json = nlohmann::json;

Json read_json_file(const std::filesystem::path& path);
/// Two-space indent, sorted keys, trailing LF. Doubles print shortest round-trip.
void write_json_file(const std::filesystem::path& path, const Json& value);
std::string dump_json(const Json& value);

// Field access with ConfigError diagnostics naming the full path ("train.lr_base").
namespace cfg {

std::string join(std::string_view path, std::string_view key);
const Json& object(const Json& j, std::string_view path);
/// Rejects keys of `j` outside `allowed`.
void only_keys(const Json& j, std::string_view path, std::initializer_list<std::string_view> allowed);

double number(const Json& j, std::string_view path, std::string_view key, double fallback);
std::size_t count(const Json& j, std::string_view path, std::string_view key, std::size_t fallback);
std::uint64_t seed(const Json& j, std::string_view path, std::string_view key, std::uint64_t fallback);
bool flag(const Json& j, std::string_view path, std::string_view key, bool fallback);
std::string text(const Json& j, std::string_view path, std::string_view key, std::string fallback);
std::vector<double> numbers(const Json& j, std::string_view path, std::string_view key);
std::vector<std::size_t> counts(const Json& j, std::string_view path, std::string_view key);

}  // namespace cfg

Json task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const Json& j, std::string_view path = "task");
Json task_to_json(const TaskBundle& task);
TaskBundle task_from_json(const Json& j);

Json network_to_json(const NetworkConfig& config);
NetworkConfig network_from_json(const Json& j, std::string_view path = "network");

Json params_to_json(const ParamVector& params);
ParamVector params_from_json(const Json& j);

Json train_to_json(const TrainConfig& config);
TrainConfig train_from_json(const Json& j, std::string_view path = "train");

Json strategy_to_json(const CommStrategy& strategy);
CommStrategy strategy_from_json(const Json& j, std::string_view path = "strategy");

Json topology_to_json(const Topology& topology);
Topology topology_from_json(const Json& j, std::string_view path = "topology");

}  // namespace lofi
