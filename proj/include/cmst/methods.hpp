// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// One interface over the five classifiers so evaluation, benchmarking and the
// command line can treat them alike.

#include "cmst/baselines.hpp"
#include "cmst/mst.hpp"
#include "cmst/thread_pool.hpp"

#include "json.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cmst {

enum class MethodKind { cmsn, cnn, cnn_committee, fcn, fcn_committee };

std::string to_string(MethodKind kind);
/// Accepts "cmsn", "cnn", "cnn-committee", "fcn", "fcn-committee".
MethodKind method_kind_from_string(const std::string& name);

struct MethodConfig {
  MethodKind kind = MethodKind::cmsn;
  mst::CmsnConfig cmsn;
  baselines::CnnBaselineConfig cnn;
  baselines::FcnBaselineConfig fcn;
  std::size_t members = 12;  // committee size
  baselines::VoteRule vote = baselines::VoteRule::label;

  /// Copy whose class count and input width match a dataset.
  MethodConfig adapted(std::size_t classes, std::size_t input_width) const;
  void validate() const;
  /// Only the sections the method uses.
  nlohmann::json active_json() const;
  std::string hash() const;
};

nlohmann::json to_json(const MethodConfig& config);
MethodConfig method_config_from_json(const nlohmann::json& j, MethodConfig defaults = {});

class Classifier {
public:
  virtual ~Classifier() = default;
  virtual MethodKind kind() const = 0;
  virtual std::size_t classes() const = 0;
  virtual std::size_t input_width() const = 0;
  /// Predicted label of every row of a count x input_width matrix.
  virtual std::vector<int> classify(std::span<const double> inputs, std::size_t count,
                                    WorkerPool* pool = nullptr) const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;
  /// Hash of every parameter file's bytes; equal models give equal hashes.
  virtual std::string model_hash() const = 0;
};

/// Trains config.kind on the rows; seed replaces any seed in the config.
std::unique_ptr<Classifier> train_classifier(const MethodConfig& config, std::span<const double> inputs,
                                             std::span<const int> labels, std::uint64_t seed,
                                             WorkerPool* pool = nullptr);

/// Wraps already trained models.
std::unique_ptr<Classifier> make_classifier(mst::CmsnModel model);
std::unique_ptr<Classifier> make_classifier(MethodKind kind, baselines::TrainedNetwork network);
std::unique_ptr<Classifier> make_classifier(MethodKind kind, baselines::Committee committee);

/// Reads any directory written by Classifier::save.
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& dir);

} // namespace cmst
