// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Comparison methods: a single CNN, a committee of CNNs, a single FCN and a
// committee of FCNs, each trained with Adam on a stratified 70/30 split with
// selection of the minimal-validation-loss epoch.

#include "cmst/cnn.hpp"
#include "cmst/nn.hpp"
#include "cmst/optim.hpp"
#include "cmst/thread_pool.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace cmst::baselines {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Per class, round((1 - train_fraction) * n) samples (at least 1, at most
/// n - 1) go to validation after a seeded shuffle. Throws DataError naming a
/// class with fewer than 2 samples.
Split stratified_split(std::span<const int> labels, std::size_t classes, double train_fraction, std::uint64_t seed);

/// Modal label; ties go to the lowest class index. Throws on an empty list
/// or a label outside [0, classes).
int committee_vote(std::span<const int> labels, std::size_t classes);

struct CnnBaselineConfig {
  cnn::CnnArch arch;
  std::size_t max_epochs = 50;
  optim::AdamConfig adam;
  std::optional<std::size_t> patience;  // epochs without a new validation minimum
  double train_fraction = 0.7;
};

struct FcnBaselineConfig {
  std::size_t input_width = 9600;
  std::array<std::size_t, 2> hidden = {200, 200};
  std::size_t classes = 17;
  std::size_t max_epochs = 100;
  double l2 = 1e-4;
  optim::AdamConfig adam;
  std::optional<std::size_t> patience;
  double train_fraction = 0.7;

  /// dense -> relu -> dense -> relu -> dense(C) -> softmax.
  nn::Architecture architecture() const;
};

nlohmann::json to_json(const CnnBaselineConfig& c);
CnnBaselineConfig cnn_baseline_config_from_json(const nlohmann::json& j, CnnBaselineConfig defaults = {});
nlohmann::json to_json(const FcnBaselineConfig& c);
FcnBaselineConfig fcn_baseline_config_from_json(const nlohmann::json& j, FcnBaselineConfig defaults = {});

struct TrainedNetwork {
  nn::Network network;
  std::vector<optim::EpochRecord> history;
  std::size_t selected_epoch = 0;
  std::uint64_t seed = 0;
};

TrainedNetwork train_cnn_baseline(const CnnBaselineConfig& config, std::span<const double> inputs,
                                  std::span<const int> labels, std::uint64_t seed);
TrainedNetwork train_fcn_baseline(const FcnBaselineConfig& config, std::span<const double> inputs,
                                  std::span<const int> labels, std::uint64_t seed);

enum class VoteRule { label, score_average };

struct Committee {
  std::vector<TrainedNetwork> members;
  VoteRule rule = VoteRule::label;
};

/// M members seeded from seed; they train concurrently on pool.
Committee train_cnn_committee(const CnnBaselineConfig& config, std::size_t members, std::span<const double> inputs,
                              std::span<const int> labels, std::uint64_t seed, WorkerPool* pool = nullptr);
Committee train_fcn_committee(const FcnBaselineConfig& config, std::size_t members, std::span<const double> inputs,
                              std::span<const int> labels, std::uint64_t seed, WorkerPool* pool = nullptr);

/// Argmax label of every row.
std::vector<int> classify(const nn::Network& net, std::span<const double> inputs, std::size_t count);
std::vector<int> classify(const Committee& committee, std::span<const double> inputs, std::size_t count,
                          WorkerPool* pool = nullptr);

} // namespace cmst::baselines
