// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Leave-one-out-per-class cross validation, class-count sweeps, worker-count
// benchmarks, confusion matrices and report export.

#include "cmst/methods.hpp"
#include "cmst/thread_pool.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmst::eval {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

struct FoldPlan {
  std::size_t classes = 0;
  std::size_t samples_per_class = 0;
  std::vector<Fold> folds;
};

/// Fold k validates the k-th sample (in row order) of every class. Throws
/// DataError when classes differ in size or have fewer than 2 samples.
FoldPlan make_folds(std::span<const int> labels, std::size_t classes);

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // rows = true class

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> predictions, std::size_t classes);

/// Builds a fresh classifier from training rows.
using TrainFn = std::function<std::unique_ptr<Classifier>(std::span<const double> inputs, std::span<const int> labels,
                                                          std::size_t classes, std::uint64_t seed, WorkerPool* pool)>;

struct Method {
  std::string id;
  std::string config_hash;
  TrainFn train;
};

/// A method that trains config adapted to the training data's class count.
Method make_method(const MethodConfig& config);

struct Trial {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double accuracy = 0.0;
  double seconds = 0.0;  // training wall time
  std::vector<int> truths;
  std::vector<int> predictions;
};

struct EvalReport {
  std::string method;
  std::string config_hash;
  std::size_t classes = 0;
  std::size_t folds = 0;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::vector<Trial> trials;
  /// Over the trials that did not fail; std uses the n - 1 divisor.
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_seconds = 0.0;
  std::size_t failed_trials = 0;
  ConfusionMatrix confusion;
};

struct LoocvOptions {
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  /// Evaluate only the first n folds; for reduced budgets.
  std::optional<std::size_t> max_folds;
  /// Run trials concurrently on the pool, each training single-threaded.
  /// Otherwise trials run in order and the pool goes to the method.
  bool parallel_trials = false;
  /// Called after each trial; must be thread-safe with parallel trials.
  std::function<void(const Trial&)> on_trial;
};

/// Seed of trial (repeat, fold).
std::uint64_t trial_seed(std::uint64_t seed, std::size_t repeat, std::size_t fold);

/// Aggregates mean, std, seconds, failures and the confusion matrix.
void summarize(EvalReport& report);

EvalReport run_loocv(const Method& method, std::span<const double> inputs, std::span<const int> labels,
                     std::size_t classes, const LoocvOptions& options, WorkerPool* pool = nullptr);

/// Rows of the lowest `count` classes.
struct Subset {
  std::vector<double> inputs;
  std::vector<int> labels;
};
Subset first_classes(std::span<const double> inputs, std::span<const int> labels, std::size_t count);

/// One report per class count, all with the same method.
std::vector<EvalReport> robustness_sweep(const Method& method, std::span<const double> inputs,
                                         std::span<const int> labels, std::size_t classes,
                                         std::span<const std::size_t> class_counts, const LoocvOptions& options,
                                         WorkerPool* pool = nullptr);

struct BenchRow {
  std::size_t workers = 1;
  std::vector<double> runs;  // seconds
  double seconds = 0.0;      // median
  double speedup = 1.0;      // single-worker time (else the first row's) / this time
  std::string model_hash;
  bool oversubscribed = false;  // more workers than hardware threads
};

/// Trains the whole dataset `repetitions` times per worker count with a pool
/// of that size and reports the median time.
std::vector<BenchRow> benchmark_cores(const MethodConfig& config, std::span<const double> inputs,
                                      std::span<const int> labels, std::size_t classes,
                                      std::span<const std::size_t> worker_counts, std::uint64_t seed,
                                      std::size_t repetitions = 3);

double median(std::vector<double> values);
/// Sample standard deviation; 0 for fewer than 2 values.
double sample_std(std::span<const double> values);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BenchRow& row);
BenchRow bench_row_from_json(const nlohmann::json& j);

/// Columns: method,classes,trials,failed,mean_accuracy,std_accuracy,mean_seconds.
void write_summary_csv(std::ostream& os, std::span<const EvalReport> reports);
void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m);
/// Columns: workers,seconds,speedup,model_hash,oversubscribed.
void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows);
/// One row per class count with a mean and std column pair per method.
void write_comparison_csv(std::ostream& os, std::span<const EvalReport> reports);

} // namespace cmst::eval
