// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cmst/nn.hpp"

#include "json.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace cmst::optim {

/// Row-major samples with matching targets.
struct SampleSet {
  std::vector<double> inputs;   // count x input_width
  std::vector<double> targets;  // count x target_width
  std::size_t count = 0;

  std::size_t input_width() const { return count ? inputs.size() / count : 0; }
  std::size_t target_width() const { return count ? targets.size() / count : 0; }
  SampleSet subset(std::span<const std::size_t> rows) const;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
};

nlohmann::json to_json(const AdamConfig& c);
/// Keys missing from j keep their value from defaults.
AdamConfig adam_config_from_json(const nlohmann::json& j, AdamConfig defaults = {});

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamConfig cfg);
};

/// One bias-corrected Adam update in place. Throws InvalidArgument on a shape
/// mismatch and TrainingError on non-finite gradients (state untouched).
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

struct LmConfig {
  double mu_initial = 1e-3;
  double mu_increase = 10.0;
  double mu_decrease = 0.1;
  double mu_min = 1e-10;
  double mu_max = 1e10;
  std::size_t max_retries = 5;  // rejected attempts tolerated per step
};

nlohmann::json to_json(const LmConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j, LmConfig defaults = {});

struct LmState {
  LmConfig config;
  double mu = 1e-3;

  LmState() = default;
  explicit LmState(LmConfig cfg) : config(cfg), mu(cfg.mu_initial) {}
};

struct LmStepResult {
  bool accepted = false;
  double sse_before = 0.0;
  double sse = 0.0;  // after the step (== sse_before when not accepted)
  std::size_t attempts = 0;
};

/// Residual vector and its Jacobian at a parameter point.
struct LeastSquaresProblem {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residuals;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
};

/// Solves (J^T J + mu I) delta = -J^T r with a Cholesky factorization.
/// When J has fewer rows than columns the equivalent N x N system
/// (J J^T + mu I) y = r, delta = -J^T y is factored instead. Returns nullopt
/// when the factorization fails.
std::optional<Eigen::VectorXd> lm_solve(const Eigen::MatrixXd& jacobian, const Eigen::VectorXd& residuals,
                                        double mu);

/// One damped Gauss-Newton step with adaptive damping. A candidate is kept
/// only if it strictly lowers the sum of squared residuals; otherwise mu grows
/// and the solve is retried up to max_retries times. Exhausting the retries is
/// reported through LmStepResult::accepted, not thrown.
LmStepResult lm_step(Eigen::VectorXd& params, const LeastSquaresProblem& problem, LmState& state);

/// d(prediction - target)/d(params) for a dense-only network. Row
/// sample * outputs + output; columns follow Network::flat_parameters().
Eigen::MatrixXd compute_jacobian(const nn::Network& net, const SampleSet& batch);

/// Residuals prediction - target, sample-major.
Eigen::VectorXd compute_residuals(const nn::Network& net, const SampleSet& batch);

/// lm_step on a dense-only network over the full batch.
LmStepResult lm_step(nn::Network& net, const SampleSet& batch, LmState& state);

// ---------------------------------------------------------------------------
// Epoch control

enum class OptimizerKind { adam, lm };

struct StopCriterion {
  std::size_t max_epochs = 3;
  double target_error = 0.0;  // stop once the training error is <= this
  /// Stop after this many epochs without a new validation minimum.
  std::optional<std::size_t> validation_patience;
};

struct TrainOptions {
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamConfig adam;
  LmConfig lm;
  StopCriterion stop;
  nn::LossKind loss = nn::LossKind::mse;
  double l2 = 0.0;  // adds l2 * ||W||^2 over conv/dense weights
  std::uint64_t seed = 0;
  /// When set, validation loss is tracked per epoch and the weights of the
  /// epoch with the lowest validation loss are returned.
  const SampleSet* validation = nullptr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_error = 0.0;
  double validation_error = 0.0;  // NaN without validation data
  double step_parameter = 0.0;    // mu for LM, learning rate for Adam
};

struct TrainResult {
  nn::Network network;
  std::vector<EpochRecord> history;
  std::size_t selected_epoch = 0;  // 1-based; 0 means the initial weights
  bool reached_target = false;
};

TrainResult train(nn::Network net, const SampleSet& data, const TrainOptions& options);

/// 1-based index of the first minimum.
std::size_t argmin_epoch(std::span<const double> errors);

/// CSV columns: epoch,train_error,validation_error,step_parameter
void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);

/// Mean loss of the network over a sample set in infer mode, batched.
double evaluate_loss(const nn::Network& net, const SampleSet& data, nn::LossKind loss);

/// Infer-mode outputs for every sample, row-major count x output width.
std::vector<double> predict_all(const nn::Network& net, std::span<const double> inputs, std::size_t count,
                                std::size_t batch_size = 64);

} // namespace cmst::optim
