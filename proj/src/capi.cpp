// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/cmst.h"

#include "cmst/error.hpp"
#include "cmst/eval.hpp"
#include "cmst/methods.hpp"
#include "cmst/run_config.hpp"
#include "cmst/serialize.hpp"
#include "cmst/signal.hpp"
#include "cmst/text.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <mutex>
#include <new>
#include <sstream>
#include <string>

struct cmst_run {
  cmst::RunConfig config;
};

struct cmst_dataset {
  cmst::signal::Dataset data;
  std::vector<double> features;
  std::vector<int> labels;
};

struct cmst_model {
  std::unique_ptr<cmst::Classifier> classifier;
};

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

thread_local std::string g_last_error;

std::mutex g_log_mutex;
cmst_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_line(const std::string& line) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  if (g_log_fn)
    g_log_fn(line.c_str(), g_log_user);
}

cmst_status status_of(cmst::ErrorKind kind) {
  switch (kind) {
  case cmst::ErrorKind::config: return CMST_ERROR_CONFIG;
  case cmst::ErrorKind::data: return CMST_ERROR_DATA;
  case cmst::ErrorKind::training: return CMST_ERROR_TRAINING;
  case cmst::ErrorKind::io: return CMST_ERROR_IO;
  case cmst::ErrorKind::shape: return CMST_ERROR_SHAPE;
  case cmst::ErrorKind::invalid_argument: return CMST_ERROR_ARGUMENT;
  }
  return CMST_ERROR_INTERNAL;
}

// Runs fn and converts any exception into a status plus message.
template <class Fn>
cmst_status guard(Fn&& fn) {
  try {
    fn();
    return CMST_OK;
  } catch (const cmst::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const json::parse_error& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return CMST_ERROR_CONFIG;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CMST_ERROR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CMST_ERROR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return CMST_ERROR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p)
    throw cmst::InvalidArgument(std::string(what) + " is NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out)
    throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_json(const char* text, const char* what) {
  require(text, what);
  return json::parse(text);
}

std::unique_ptr<cmst_dataset> wrap(cmst::signal::Dataset d) {
  auto out = std::make_unique<cmst_dataset>();
  out->features = d.feature_matrix();
  out->labels = d.labels();
  out->data = std::move(d);
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw cmst::IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string confusion_name(const cmst::eval::EvalReport& r) {
  return "confusion_" + r.method + "_c" + std::to_string(r.classes) + ".csv";
}

} // namespace

extern "C" {

const char* cmst_version(void) { return "1.0.0"; }

const char* cmst_status_name(cmst_status s) {
  switch (s) {
  case CMST_OK: return "ok";
  case CMST_ERROR_CONFIG: return "config error";
  case CMST_ERROR_DATA: return "data error";
  case CMST_ERROR_TRAINING: return "training error";
  case CMST_ERROR_IO: return "i/o error";
  case CMST_ERROR_SHAPE: return "shape error";
  case CMST_ERROR_ARGUMENT: return "invalid argument";
  case CMST_ERROR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* cmst_last_error(void) { return g_last_error.c_str(); }

void cmst_string_free(char* text) { std::free(text); }

void cmst_set_log(cmst_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

cmst_status cmst_run_resolve(const char* text, cmst_run** out) {
  return guard([&] {
    require(out, "out");
    auto run = std::make_unique<cmst_run>();
    run->config = cmst::resolve_run_config(parse_json(text, "config"));
    *out = run.release();
  });
}

cmst_status cmst_run_to_json(const cmst_run* run, char** out) {
  return guard([&] {
    require(run, "run");
    require(out, "out");
    *out = dup_string(cmst::to_json(run->config).dump(2) + "\n");
  });
}

const char* cmst_run_output(const cmst_run* run) { return run ? run->config.output.c_str() : ""; }

void cmst_run_free(cmst_run* run) { delete run; }

cmst_status cmst_dataset_open(const cmst_run* run, cmst_dataset** out) {
  return guard([&] {
    require(run, "run");
    require(out, "out");
    const auto& src = run->config.data;
    auto d = src.manifest ? cmst::signal::load_dataset(*src.manifest) : cmst::signal::generate_dataset(*src.generate);
    if (const auto n = run->config.classes) {
      if (*n > d.num_classes)
        throw cmst::ConfigError("classes " + std::to_string(*n) + " exceeds the " + std::to_string(d.num_classes) +
                                " classes in the dataset");
      d = d.first_classes(*n);
    }
    *out = wrap(std::move(d)).release();
  });
}

cmst_status cmst_dataset_generate(const char* spec_json, cmst_dataset** out) {
  return guard([&] {
    require(out, "out");
    const auto cfg = cmst::signal::generator_config_from_json(parse_json(spec_json, "spec"));
    *out = wrap(cmst::signal::generate_dataset(cfg)).release();
  });
}

cmst_status cmst_dataset_load(const char* manifest_path, cmst_dataset** out) {
  return guard([&] {
    require(manifest_path, "manifest path");
    require(out, "out");
    *out = wrap(cmst::signal::load_dataset(manifest_path)).release();
  });
}

cmst_status cmst_dataset_save(const cmst_dataset* data, const char* dir) {
  return guard([&] {
    require(data, "dataset");
    require(dir, "dir");
    cmst::signal::save_dataset(data->data, dir);
  });
}

cmst_status cmst_dataset_shape(const cmst_dataset* data, size_t* classes, size_t* samples_per_class, size_t* width) {
  return guard([&] {
    require(data, "dataset");
    if (classes)
      *classes = data->data.num_classes;
    if (samples_per_class)
      *samples_per_class = data->data.samples_per_class;
    if (width)
      *width = cmst::signal::kFingerprintLength;
  });
}

cmst_status cmst_dataset_rows(const cmst_dataset* data, double* features, int* labels) {
  return guard([&] {
    require(data, "dataset");
    if (features)
      std::memcpy(features, data->features.data(), data->features.size() * sizeof(double));
    if (labels)
      std::memcpy(labels, data->labels.data(), data->labels.size() * sizeof(int));
  });
}

cmst_status cmst_dataset_write_signal_table(const cmst_dataset* data, const char* csv_path) {
  return guard([&] {
    require(data, "dataset");
    require(csv_path, "csv path");
    if (data->data.background.empty())
      throw cmst::DataError("the dataset has no empty-scene traces to subtract");
    const auto bg = cmst::signal::background_average(data->data.background);
    std::ostringstream os;
    cmst::signal::write_signal_table_csv(os, cmst::signal::signal_table(data->data.traces, bg));
    cmst::write_text_file(csv_path, os.str());
  });
}

void cmst_dataset_free(cmst_dataset* data) { delete data; }

cmst_status cmst_train(const cmst_run* run, const cmst_dataset* data, cmst_model** out) {
  return guard([&] {
    require(run, "run");
    require(data, "dataset");
    require(out, "out");
    const auto cfg = run->config.method.adapted(data->data.num_classes, cmst::signal::kFingerprintLength);
    cmst::WorkerPool pool(run->config.workers);
    auto m = std::make_unique<cmst_model>();
    m->classifier = cmst::train_classifier(cfg, data->features, data->labels, run->config.seed, &pool);
    *out = m.release();
  });
}

cmst_status cmst_model_save(const cmst_model* model, const char* dir) {
  return guard([&] {
    require(model, "model");
    require(dir, "dir");
    model->classifier->save(dir);
  });
}

cmst_status cmst_model_load(const char* dir, cmst_model** out) {
  return guard([&] {
    require(dir, "dir");
    require(out, "out");
    auto m = std::make_unique<cmst_model>();
    m->classifier = cmst::load_classifier(dir);
    *out = m.release();
  });
}

cmst_status cmst_model_classify(const cmst_model* model, const double* rows, size_t count, size_t width, int* labels) {
  return guard([&] {
    require(model, "model");
    require(rows, "rows");
    require(labels, "labels");
    if (width != model->classifier->input_width())
      throw cmst::ShapeError("model expects rows of " + std::to_string(model->classifier->input_width()) +
                             " values, got " + std::to_string(width));
    const auto pred = model->classifier->classify(std::span<const double>(rows, count * width), count);
    std::memcpy(labels, pred.data(), pred.size() * sizeof(int));
  });
}

cmst_status cmst_model_info(const cmst_model* model, char** out) {
  return guard([&] {
    require(model, "model");
    require(out, "out");
    const auto& c = *model->classifier;
    const json j = {{"method", cmst::to_string(c.kind())},
                    {"classes", c.classes()},
                    {"input_width", c.input_width()},
                    {"model_hash", c.model_hash()}};
    *out = dup_string(j.dump());
  });
}

void cmst_model_free(cmst_model* model) { delete model; }

cmst_status cmst_eval(const cmst_run* run, const cmst_dataset* data, char** report_json) {
  return guard([&] {
    require(run, "run");
    require(data, "dataset");
    require(report_json, "out");
    const auto& rc = run->config;
    const auto method = cmst::eval::make_method(rc.method);
    cmst::eval::LoocvOptions opt;
    opt.repeats = rc.eval.repeats;
    opt.seed = rc.seed;
    opt.max_folds = rc.eval.max_folds;
    opt.parallel_trials = rc.eval.parallel_trials;
    opt.on_trial = [&](const cmst::eval::Trial& t) {
      char line[256];
      if (t.failed)
        std::snprintf(line, sizeof line, "%s repeat %zu fold %zu failed: %s", method.id.c_str(), t.repeat, t.fold,
                      t.error.c_str());
      else
        std::snprintf(line, sizeof line, "%s repeat %zu fold %zu accuracy %.4f (%.1f s)", method.id.c_str(), t.repeat,
                      t.fold, t.accuracy, t.seconds);
      log_line(line);
    };
    cmst::WorkerPool pool(rc.workers);
    std::vector<cmst::eval::EvalReport> reports;
    const std::size_t classes = data->data.num_classes;
    if (rc.eval.class_counts.empty())
      reports.push_back(cmst::eval::run_loocv(method, data->features, data->labels, classes, opt, &pool));
    else
      reports = cmst::eval::robustness_sweep(method, data->features, data->labels, classes, rc.eval.class_counts, opt,
                                             &pool);
    json list = json::array();
    for (const auto& r : reports)
      list.push_back(cmst::eval::to_json(r));
    const json out = {{"format", "cmst-eval"}, {"version", 1}, {"config", cmst::to_json(rc)}, {"reports", list}};
    *report_json = dup_string(out.dump());
  });
}

cmst_status cmst_eval_model(const cmst_model* model, const cmst_dataset* data, char** report_json) {
  return guard([&] {
    require(model, "model");
    require(data, "dataset");
    require(report_json, "out");
    const auto& c = *model->classifier;
    if (c.classes() != data->data.num_classes)
      throw cmst::DataError("model has " + std::to_string(c.classes()) + " classes but the dataset has " +
                            std::to_string(data->data.num_classes));
    cmst::eval::EvalReport r;
    r.method = cmst::to_string(c.kind());
    r.config_hash = c.model_hash();
    r.classes = c.classes();
    r.folds = 1;
    r.repeats = 1;
    cmst::eval::Trial t;
    t.truths = data->labels;
    t.predictions = c.classify(data->features, data->labels.size());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < t.truths.size(); ++i)
      correct += t.truths[i] == t.predictions[i];
    t.accuracy = double(correct) / double(t.truths.size());
    r.trials.push_back(std::move(t));
    cmst::eval::summarize(r);
    const json out = {{"format", "cmst-eval"}, {"version", 1}, {"reports", json::array({cmst::eval::to_json(r)})}};
    *report_json = dup_string(out.dump());
  });
}

cmst_status cmst_bench(const cmst_run* run, const cmst_dataset* data, char** bench_json) {
  return guard([&] {
    require(run, "run");
    require(data, "dataset");
    require(bench_json, "out");
    const auto& rc = run->config;
    const auto rows = cmst::eval::benchmark_cores(rc.method, data->features, data->labels, data->data.num_classes,
                                                  rc.bench.workers, rc.seed, rc.bench.repetitions);
    json list = json::array();
    for (const auto& r : rows) {
      log_line("workers " + std::to_string(r.workers) + ": " + cmst::to_text(r.seconds) + " s, speedup " +
               cmst::to_text(r.speedup));
      list.push_back(cmst::eval::to_json(r));
    }
    const json out = {{"format", "cmst-bench"},
                      {"version", 1},
                      {"method", cmst::to_string(rc.method.kind)},
                      {"config_hash", rc.method.hash()},
                      {"config", cmst::to_json(rc)},
                      {"rows", list}};
    *bench_json = dup_string(out.dump());
  });
}

cmst_status cmst_report_write(const char* report_json, const char* dir) {
  return guard([&] {
    require(dir, "dir");
    json j;
    try {
      j = parse_json(report_json, "report");
    } catch (const json::parse_error& e) {
      throw cmst::DataError(std::string("report is not valid JSON: ") + e.what());
    }
    const fs::path out(dir);
    make_dir(out);
    const std::string format = j.value("format", "");
    if (format == "cmst-eval") {
      std::vector<cmst::eval::EvalReport> reports;
      for (const auto& r : j.at("reports"))
        reports.push_back(cmst::eval::report_from_json(r));
      cmst::write_text_file(out / "report.json", j.dump(2) + "\n");
      std::ostringstream summary;
      cmst::eval::write_summary_csv(summary, reports);
      cmst::write_text_file(out / "summary.csv", summary.str());
      for (const auto& r : reports) {
        std::ostringstream conf;
        cmst::eval::write_confusion_csv(conf, r.confusion);
        cmst::write_text_file(out / confusion_name(r), conf.str());
      }
    } else if (format == "cmst-bench") {
      std::vector<cmst::eval::BenchRow> rows;
      for (const auto& r : j.at("rows"))
        rows.push_back(cmst::eval::bench_row_from_json(r));
      cmst::write_text_file(out / "bench.json", j.dump(2) + "\n");
      std::ostringstream csv;
      cmst::eval::write_bench_csv(csv, rows);
      cmst::write_text_file(out / "bench.csv", csv.str());
    } else {
      throw cmst::DataError("unknown report format '" + format + "'");
    }
  });
}

cmst_status cmst_report_merge(const char* const* report_paths, size_t count, const char* csv_path) {
  return guard([&] {
    require(csv_path, "csv path");
    if (count == 0)
      throw cmst::InvalidArgument("no reports to merge");
    require(report_paths, "report paths");
    std::vector<cmst::eval::EvalReport> reports;
    for (size_t i = 0; i < count; ++i) {
      require(report_paths[i], "report path");
      const json j = cmst::read_json_file(report_paths[i]);
      if (j.value("format", "") != "cmst-eval")
        throw cmst::DataError(std::string(report_paths[i]) + ": not an eval report");
      for (const auto& r : j.at("reports"))
        reports.push_back(cmst::eval::report_from_json(r));
    }
    std::ostringstream os;
    cmst::eval::write_comparison_csv(os, reports);
    cmst::write_text_file(csv_path, os.str());
  });
}

} // extern "C"
