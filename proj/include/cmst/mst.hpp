// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Convolutional multistage network: a stage-1 CNN bank followed by stages of
// small per-class FCN groups trained with Levenberg-Marquardt under a
// decreasing target-error schedule. The final class score averages the last
// stage's group outputs.

#include "cmst/cnn.hpp"
#include "cmst/nn.hpp"
#include "cmst/optim.hpp"
#include "cmst/thread_pool.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace cmst::mst {

struct StageSpec {
  std::size_t index = 2;   // 2..S; stage 1 is the CNN bank
  std::size_t groups = 4;  // FCNs per class
  std::array<std::size_t, 2> hidden = {10, 10};
  std::size_t epochs = 3;
  double target_error = 0.05;
};

struct CmsnConfig {
  cnn::BankConfig bank;  // K = bank.members, C = bank.arch.classes
  std::size_t groups = 4;
  std::size_t stages = 4;  // S, including the CNN stage
  std::vector<double> schedule = {0.05, 0.02, 0.005};
  std::array<std::size_t, 2> hidden = {10, 10};
  std::size_t fcn_epochs = 3;
  optim::LmConfig lm;
  std::uint64_t seed = 0;

  std::size_t classes() const noexcept { return bank.arch.classes; }
  /// Throws ConfigError on S < 2, G < 1, a schedule of the wrong length or a
  /// schedule that does not strictly decrease.
  void validate() const;
  std::vector<StageSpec> stage_specs() const;
};

nlohmann::json to_json(const CmsnConfig& config);
CmsnConfig cmsn_config_from_json(const nlohmann::json& j, CmsnConfig defaults = {});

/// Input widths and slot positions of a C-MSN with K members, C classes, G
/// groups. Stage 2 reads the bank features member-major; later stages read
/// the previous stage's outputs class-major.
struct Layout {
  std::size_t members = 12;
  std::size_t classes = 17;
  std::size_t groups = 4;

  std::size_t stage_input_width(std::size_t stage) const;
  std::size_t networks_per_stage() const noexcept { return classes * groups; }
  std::size_t bank_slot(std::size_t member, std::size_t cls) const noexcept { return member * classes + cls; }
  std::size_t fcn_slot(std::size_t cls, std::size_t group) const noexcept { return cls * groups + group; }
};

/// 1 where labels[i] == cls, else 0.
std::vector<double> build_stage_targets(std::span<const int> labels, int cls);

/// input -> hidden[0] tanh -> hidden[1] tanh -> 1 linear.
nn::Architecture fcn_architecture(std::size_t input_width, const std::array<std::size_t, 2>& hidden);

struct Stage {
  StageSpec spec;
  std::size_t classes = 0;
  std::size_t input_width = 0;
  std::vector<nn::Network> fcns;  // class-major, group-minor
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<optim::EpochRecord>> history;

  /// Mean over FCNs of the final-epoch training MSE.
  double mean_train_error() const;
};

/// Trains C x G FCNs, FCN (c, g) against the one-vs-rest targets of class c.
Stage train_stage(const StageSpec& spec, std::size_t classes, std::span<const double> inputs, std::size_t count,
                  std::span<const int> labels, std::span<const std::uint64_t> seeds, const optim::LmConfig& lm,
                  WorkerPool* pool = nullptr);

/// count x (C * G) outputs, class-major, group-minor.
std::vector<double> stage_forward(const Stage& stage, std::span<const double> inputs, std::size_t count,
                                  WorkerPool* pool = nullptr);

struct ClassScores {
  std::vector<double> scores;
  int label = 0;
};

/// Lowest index among the maxima.
int argmax(std::span<const double> values);

/// Mean of each class's G consecutive outputs.
ClassScores average_groups(std::span<const double> outputs, std::size_t classes, std::size_t groups);

struct CmsnModel {
  CmsnConfig config;
  cnn::CnnBank bank;
  std::vector<Stage> stages;  // stages 2..S

  Layout layout() const;
};

/// Seeds of FCN (c, g) in stage s and of the bank members.
std::uint64_t fcn_seed(std::uint64_t seed, std::size_t stage, std::size_t cls, std::size_t group);
std::vector<std::uint64_t> member_seeds(const CmsnConfig& config);

/// Fully initialized but untrained model with the configured structure.
CmsnModel build_cmsn(const CmsnConfig& config);

/// Trains stage 1 on the fingerprints, then each FCN stage on the previous
/// stage's outputs. Failures are rethrown as TrainingError naming the stage.
CmsnModel train_cmsn(const CmsnConfig& config, std::span<const double> inputs, std::span<const int> labels,
                     WorkerPool* pool = nullptr);

/// Final-stage outputs for every row, count x (C * G).
std::vector<double> final_outputs(const CmsnModel& model, std::span<const double> inputs, std::size_t count,
                                  WorkerPool* pool = nullptr);
ClassScores predict(const CmsnModel& model, std::span<const double> fingerprint);
std::vector<ClassScores> predict_batch(const CmsnModel& model, std::span<const double> inputs, std::size_t count,
                                       WorkerPool* pool = nullptr);

/// Columns: stage,network,epoch,train_error,validation_error,step_parameter.
/// Stage 1 rows are the CNN members.
void write_model_history_csv(std::ostream& os, const CmsnModel& model);

/// manifest.json, cnn/, stage_N/fcn_cXX_gY.bin and history.csv.
void save_model(const CmsnModel& model, const std::filesystem::path& dir);
CmsnModel load_model(const std::filesystem::path& dir);

} // namespace cmst::mst
