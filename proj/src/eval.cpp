// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/eval.hpp"

#include "cmst/error.hpp"
#include "cmst/random.hpp"
#include "cmst/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <thread>

namespace cmst::eval {

using nlohmann::json;

FoldPlan make_folds(std::span<const int> labels, std::size_t classes) {
  if (classes < 2)
    throw DataError("cross validation needs at least 2 classes");
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  const std::size_t n = by_class[0].size();
  for (std::size_t c = 0; c < classes; ++c)
    if (by_class[c].size() != n)
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " samples but class 0 has " + std::to_string(n) + "; folds need equal class sizes");
  if (n < 2)
    throw DataError("folds need at least 2 samples per class");

  FoldPlan plan;
  plan.classes = classes;
  plan.samples_per_class = n;
  plan.folds.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<bool> held(labels.size(), false);
    for (std::size_t c = 0; c < classes; ++c)
      held[by_class[c][k]] = true;
    for (std::size_t i = 0; i < labels.size(); ++i)
      (held[i] ? plan.folds[k].validation : plan.folds[k].train).push_back(i);
  }
  return plan;
}

ConfusionMatrix confusion_matrix(std::span<const int> truths, std::span<const int> predictions, std::size_t classes) {
  if (truths.size() != predictions.size())
    throw InvalidArgument("confusion matrix: " + std::to_string(truths.size()) + " truths vs " +
                          std::to_string(predictions.size()) + " predictions");
  ConfusionMatrix m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes)
      throw InvalidArgument("confusion matrix: label pair (" + std::to_string(t) + ", " + std::to_string(p) +
                            ") outside [0, " + std::to_string(classes) + ")");
    ++m[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return m;
}

Method make_method(const MethodConfig& config) {
  config.validate();
  Method m;
  m.id = to_string(config.kind);
  m.config_hash = config.hash();
  m.train = [config](std::span<const double> inputs, std::span<const int> labels, std::size_t classes,
                     std::uint64_t seed, WorkerPool* pool) {
    if (labels.empty() || inputs.size() % labels.size() != 0)
      throw ShapeError("training rows do not match the label count");
    const MethodConfig c = config.adapted(classes, inputs.size() / labels.size());
    return train_classifier(c, inputs, labels, seed, pool);
  };
  return m;
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t repeat, std::size_t fold) {
  return derive_seed(seed, {repeat, fold});
}

double median(std::vector<double> values) {
  if (values.empty())
    throw InvalidArgument("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2)
    return 0.0;
  double mean = 0.0;
  for (double x : v)
    mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (double x : v)
    ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

void summarize(EvalReport& r) {
  std::vector<double> acc;
  double seconds = 0.0;
  r.failed_trials = 0;
  r.confusion.assign(r.classes, std::vector<std::size_t>(r.classes, 0));
  for (const auto& t : r.trials) {
    if (t.failed) {
      ++r.failed_trials;
      continue;
    }
    acc.push_back(t.accuracy);
    seconds += t.seconds;
    const auto m = confusion_matrix(t.truths, t.predictions, r.classes);
    for (std::size_t i = 0; i < r.classes; ++i)
      for (std::size_t j = 0; j < r.classes; ++j)
        r.confusion[i][j] += m[i][j];
  }
  double total = 0.0;
  for (double a : acc)
    total += a;
  r.mean_accuracy = acc.empty() ? 0.0 : total / double(acc.size());
  r.std_accuracy = sample_std(acc);
  r.mean_seconds = acc.empty() ? 0.0 : seconds / double(acc.size());
}

namespace {

std::vector<double> gather_rows(std::span<const double> inputs, std::size_t width, std::span<const std::size_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size() * width);
  for (auto i : rows)
    out.insert(out.end(), inputs.begin() + std::ptrdiff_t(i * width), inputs.begin() + std::ptrdiff_t((i + 1) * width));
  return out;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto i : rows)
    out.push_back(labels[i]);
  return out;
}

void run_trial(const Method& method, const Fold& fold, std::span<const double> inputs, std::span<const int> labels,
               std::size_t width, std::size_t classes, Trial& t, WorkerPool* pool) {
  const auto train_x = gather_rows(inputs, width, fold.train);
  const auto train_y = gather_labels(labels, fold.train);
  const auto val_x = gather_rows(inputs, width, fold.validation);
  t.truths = gather_labels(labels, fold.validation);
  try {
    const auto start = std::chrono::steady_clock::now();
    auto model = method.train(train_x, train_y, classes, t.seed, pool);
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    t.predictions = model->classify(val_x, fold.validation.size(), pool);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < t.truths.size(); ++i)
      correct += t.truths[i] == t.predictions[i];
    t.accuracy = double(correct) / double(t.truths.size());
  } catch (const std::exception& e) {
    t.failed = true;
    t.error = e.what();
    t.predictions.clear();
    t.accuracy = 0.0;
  }
}

} // namespace

EvalReport run_loocv(const Method& method, std::span<const double> inputs, std::span<const int> labels,
                     std::size_t classes, const LoocvOptions& opt, WorkerPool* pool) {
  if (opt.repeats < 1)
    throw ConfigError("repeats must be >= 1");
  if (opt.max_folds && *opt.max_folds < 1)
    throw ConfigError("max folds must be >= 1");
  if (labels.empty() || inputs.size() % labels.size() != 0)
    throw ShapeError("input rows do not match the label count");
  const std::size_t width = inputs.size() / labels.size();
  const FoldPlan plan = make_folds(labels, classes);
  const std::size_t folds = std::min(plan.folds.size(), opt.max_folds.value_or(plan.folds.size()));

  EvalReport r;
  r.method = method.id;
  r.config_hash = method.config_hash;
  r.classes = classes;
  r.folds = folds;
  r.repeats = opt.repeats;
  r.seed = opt.seed;
  r.trials.resize(opt.repeats * folds);
  for (std::size_t rep = 0; rep < opt.repeats; ++rep)
    for (std::size_t k = 0; k < folds; ++k) {
      Trial& t = r.trials[rep * folds + k];
      t.repeat = rep;
      t.fold = k;
      t.seed = trial_seed(opt.seed, rep, k);
    }
  auto one = [&](std::size_t i, WorkerPool* inner) {
    Trial& t = r.trials[i];
    run_trial(method, plan.folds[t.fold], inputs, labels, width, classes, t, inner);
    if (opt.on_trial)
      opt.on_trial(t);
  };
  if (opt.parallel_trials)
    parallel_for(pool, r.trials.size(), [&](std::size_t i) { one(i, nullptr); });
  else
    for (std::size_t i = 0; i < r.trials.size(); ++i)
      one(i, pool);
  summarize(r);
  return r;
}

Subset first_classes(std::span<const double> inputs, std::span<const int> labels, std::size_t count) {
  if (labels.empty() || inputs.size() % labels.size() != 0)
    throw ShapeError("input rows do not match the label count");
  const std::size_t width = inputs.size() / labels.size();
  Subset s;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < count) {
      s.inputs.insert(s.inputs.end(), inputs.begin() + std::ptrdiff_t(i * width),
                      inputs.begin() + std::ptrdiff_t((i + 1) * width));
      s.labels.push_back(labels[i]);
    }
  return s;
}

std::vector<EvalReport> robustness_sweep(const Method& method, std::span<const double> inputs,
                                         std::span<const int> labels, std::size_t classes,
                                         std::span<const std::size_t> counts, const LoocvOptions& opt,
                                         WorkerPool* pool) {
  for (auto n : counts) {
    if (n > classes)
      throw ConfigError("class count " + std::to_string(n) + " exceeds the " + std::to_string(classes) +
                        " classes in the dataset");
    if (n < 2)
      throw ConfigError("class count " + std::to_string(n) + " is below 2");
  }
  std::vector<EvalReport> out;
  for (auto n : counts) {
    if (n == classes) {
      out.push_back(run_loocv(method, inputs, labels, classes, opt, pool));
    } else {
      const Subset s = first_classes(inputs, labels, n);
      out.push_back(run_loocv(method, s.inputs, s.labels, n, opt, pool));
    }
  }
  return out;
}

std::vector<BenchRow> benchmark_cores(const MethodConfig& config, std::span<const double> inputs,
                                      std::span<const int> labels, std::size_t classes,
                                      std::span<const std::size_t> worker_counts, std::uint64_t seed,
                                      std::size_t repetitions) {
  if (worker_counts.empty())
    throw ConfigError("no worker counts to benchmark");
  if (repetitions < 1)
    throw ConfigError("repetitions must be >= 1");
  if (labels.empty() || inputs.size() % labels.size() != 0)
    throw ShapeError("input rows do not match the label count");
  const MethodConfig c = config.adapted(classes, inputs.size() / labels.size());
  c.validate();
  const std::size_t hardware = std::max(1u, std::thread::hardware_concurrency());
  std::vector<BenchRow> rows;
  for (auto w : worker_counts) {
    if (w < 1)
      throw ConfigError("worker counts must be >= 1");
    BenchRow row;
    row.workers = w;
    row.oversubscribed = w > hardware;
    WorkerPool pool(w);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      auto model = train_classifier(c, inputs, labels, seed, &pool);
      row.runs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      const std::string h = model->model_hash();
      if (!row.model_hash.empty() && h != row.model_hash)
        throw TrainingError("repeated training with " + std::to_string(w) + " workers produced different models");
      row.model_hash = h;
    }
    row.seconds = median(row.runs);
    rows.push_back(std::move(row));
  }
  // Speedup is relative to the single-worker row when there is one.
  double base = rows.front().seconds;
  for (const auto& r : rows)
    if (r.workers == 1) {
      base = r.seconds;
      break;
    }
  for (auto& r : rows)
    r.speedup = r.seconds > 0.0 ? base / r.seconds : 1.0;
  return rows;
}

json to_json(const EvalReport& r) {
  json trials = json::array();
  for (const auto& t : r.trials) {
    json j = {{"repeat", t.repeat},   {"fold", t.fold},         {"seed", t.seed},
              {"failed", t.failed},   {"accuracy", t.accuracy}, {"seconds", t.seconds},
              {"truths", t.truths},   {"predictions", t.predictions}};
    if (t.failed)
      j["error"] = t.error;
    trials.push_back(std::move(j));
  }
  return {{"method", r.method},
          {"config_hash", r.config_hash},
          {"classes", r.classes},
          {"folds", r.folds},
          {"repeats", r.repeats},
          {"seed", r.seed},
          {"trial_count", r.trials.size()},
          {"failed_trials", r.failed_trials},
          {"mean_accuracy", r.mean_accuracy},
          {"std_accuracy", r.std_accuracy},
          {"mean_seconds", r.mean_seconds},
          {"confusion", r.confusion},
          {"trials", trials}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.method = j.at("method").get<std::string>();
    r.config_hash = j.value("config_hash", std::string());
    r.classes = j.at("classes").get<std::size_t>();
    r.folds = j.at("folds").get<std::size_t>();
    r.repeats = j.at("repeats").get<std::size_t>();
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& t : j.at("trials")) {
      Trial x;
      x.repeat = t.at("repeat").get<std::size_t>();
      x.fold = t.at("fold").get<std::size_t>();
      x.seed = t.at("seed").get<std::uint64_t>();
      x.failed = t.at("failed").get<bool>();
      x.error = t.value("error", std::string());
      x.accuracy = t.at("accuracy").get<double>();
      x.seconds = t.at("seconds").get<double>();
      x.truths = t.at("truths").get<std::vector<int>>();
      x.predictions = t.at("predictions").get<std::vector<int>>();
      r.trials.push_back(std::move(x));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("eval report: ") + e.what());
  }
  summarize(r);
  return r;
}

json to_json(const BenchRow& r) {
  return {{"workers", r.workers},   {"runs", r.runs},         {"seconds", r.seconds},
          {"speedup", r.speedup},   {"model_hash", r.model_hash}, {"oversubscribed", r.oversubscribed}};
}

BenchRow bench_row_from_json(const json& j) {
  BenchRow r;
  try {
    r.workers = j.at("workers").get<std::size_t>();
    r.runs = j.value("runs", std::vector<double>{});
    r.seconds = j.at("seconds").get<double>();
    r.speedup = j.at("speedup").get<double>();
    r.model_hash = j.at("model_hash").get<std::string>();
    r.oversubscribed = j.value("oversubscribed", false);
  } catch (const json::exception& e) {
    throw DataError(std::string("bench row: ") + e.what());
  }
  return r;
}

void write_summary_csv(std::ostream& os, std::span<const EvalReport> reports) {
  os << "method,classes,trials,failed,mean_accuracy,std_accuracy,mean_seconds\n";
  for (const auto& r : reports)
    os << r.method << ',' << r.classes << ',' << r.trials.size() << ',' << r.failed_trials << ','
       << to_text(r.mean_accuracy) << ',' << to_text(r.std_accuracy) << ',' << to_text(r.mean_seconds) << '\n';
}

void write_confusion_csv(std::ostream& os, const ConfusionMatrix& m) {
  os << "true\\predicted";
  for (std::size_t j = 0; j < m.size(); ++j)
    os << ',' << j;
  os << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    os << i;
    for (auto v : m[i])
      os << ',' << v;
    os << '\n';
  }
}

void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows) {
  os << "workers,seconds,speedup,model_hash,oversubscribed\n";
  for (const auto& r : rows)
    os << r.workers << ',' << to_text(r.seconds) << ',' << to_text(r.speedup) << ',' << r.model_hash << ','
       << (r.oversubscribed ? 1 : 0) << '\n';
}

void write_comparison_csv(std::ostream& os, std::span<const EvalReport> reports) {
  std::vector<std::string> methods;
  std::map<std::size_t, std::map<std::string, const EvalReport*>> table;
  for (const auto& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    table[r.classes][r.method] = &r;  // a later report for the same cell wins
  }
  os << "classes";
  for (const auto& m : methods)
    os << ',' << m << "_mean," << m << "_std";
  os << '\n';
  for (const auto& [classes, row] : table) {
    os << classes;
    for (const auto& m : methods) {
      const auto it = row.find(m);
      if (it == row.end())
        os << ",,";
      else
        os << ',' << to_text(it->second->mean_accuracy) << ',' << to_text(it->second->std_accuracy);
    }
    os << '\n';
  }
}

} // namespace cmst::eval
