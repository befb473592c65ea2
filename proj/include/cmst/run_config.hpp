// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// A complete, replayable description of one run. Resolution fills every
// default so the written snapshot reproduces the run without other inputs.

#include "cmst/methods.hpp"
#include "cmst/signal.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cmst {

struct DataSource {
  std::optional<std::string> manifest;             // an existing dataset
  std::optional<signal::GeneratorConfig> generate;  // or a generator spec
};

struct EvalSettings {
  std::size_t repeats = 5;
  std::optional<std::size_t> max_folds;
  std::vector<std::size_t> class_counts;  // empty: the dataset's class count only
  bool parallel_trials = false;
};

struct BenchSettings {
  std::vector<std::size_t> workers = {1, 2, 4};
  std::size_t repetitions = 3;
};

struct RunConfig {
  MethodConfig method;
  DataSource data;
  std::optional<std::size_t> classes;  // keep only the first n classes of the data
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string output;
  EvalSettings eval;
  BenchSettings bench;
};

/// Requires "seed" and a data source ("data": {"manifest": path} or
/// {"generate": spec}); a generator spec without a seed takes the run seed.
/// Worker count 0 or absent becomes the machine's hardware thread count.
/// Throws ConfigError on anything missing or inconsistent and when a
/// manifest path does not exist.
RunConfig resolve_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

/// Parses "8..17", "8,10,12" or "17".
std::vector<std::size_t> parse_count_list(const std::string& text);

} // namespace cmst
