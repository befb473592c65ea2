// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

// Command line front end. Everything goes through the C interface.

#include "cmst/cmst.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Process exit codes.
enum Exit : int {
  kOk = 0,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kTraining = 5,
  kIo = 6,
  kInternal = 7,
};

constexpr const char* kOutputRootEnv = "CMST_OUTPUT_ROOT";

int exit_code(cmst_status s) {
  switch (s) {
  case CMST_OK: return kOk;
  case CMST_ERROR_CONFIG: return kConfig;
  case CMST_ERROR_DATA: return kData;
  case CMST_ERROR_TRAINING: return kTraining;
  case CMST_ERROR_IO: return kIo;
  default: return kInternal;
  }
}

struct Failure {
  int code;
  std::string message;
};

void check(cmst_status s) {
  if (s != CMST_OK)
    throw Failure{exit_code(s), std::string(cmst_status_name(s)) + ": " + cmst_last_error()};
}

[[noreturn]] void config_failure(const std::string& msg) { throw Failure{kConfig, "config error: " + msg}; }

struct RunDeleter {
  void operator()(cmst_run* p) const { cmst_run_free(p); }
};
struct DatasetDeleter {
  void operator()(cmst_dataset* p) const { cmst_dataset_free(p); }
};
struct ModelDeleter {
  void operator()(cmst_model* p) const { cmst_model_free(p); }
};
struct StringDeleter {
  void operator()(char* p) const { cmst_string_free(p); }
};
using RunPtr = std::unique_ptr<cmst_run, RunDeleter>;
using DatasetPtr = std::unique_ptr<cmst_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<cmst_model, ModelDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw Failure{kIo, "i/o error: cannot open " + path};
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    config_failure(path + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path())
    fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out)
    throw Failure{kIo, "i/o error: cannot write " + path.string()};
}

// Relative output paths live under $CMST_OUTPUT_ROOT when it is set.
std::string output_path(const std::string& flag, const std::string& fallback) {
  const fs::path p = flag.empty() ? fs::path(fallback) : fs::path(flag);
  if (p.is_absolute())
    return p.string();
  const char* root = std::getenv(kOutputRootEnv);
  return (root && *root) ? (fs::path(root) / p).string() : p.string();
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size())
        throw std::invalid_argument(item);
    } catch (const std::exception&) {
      config_failure("cannot read '" + text + "' as a list of numbers");
    }
  }
  return out;
}

void log_to_stderr(const char* line, void*) { std::cerr << line << std::endl; }

// Flags shared by train, eval and bench; each overrides the config file.
struct RunFlags {
  std::string config;
  std::string data;
  std::string spec;
  std::string method;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  std::optional<std::size_t> num_classes;
  std::optional<std::size_t> members;
  std::optional<std::size_t> groups;
  std::optional<std::size_t> stages;
  std::string schedule;
  std::optional<std::size_t> cnn_epochs;
  std::optional<std::size_t> fcn_epochs;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> patience;
  std::optional<double> lr;
  std::optional<double> mu;
  std::string vote;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "run config JSON file");
    app->add_option("--data", data, "dataset manifest.json");
    app->add_option("--spec", spec, "generator spec JSON; the data is synthesized in memory");
    app->add_option("--method", method, "cmsn, cnn, cnn-committee, fcn or fcn-committee");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--workers", workers, "worker threads (0 = all hardware threads)");
    app->add_option("--out", out, "output directory");
    app->add_option("--num-classes", num_classes, "use only the first C classes of the data");
    app->add_option("--members", members, "CNN bank size K, also the committee size");
    app->add_option("--groups", groups, "FCNs per class G");
    app->add_option("--stages", stages, "total stages S including the CNN stage");
    app->add_option("--schedule", schedule, "target errors of stages 2..S, e.g. 0.05,0.02,0.005");
    app->add_option("--cnn-epochs", cnn_epochs, "epochs of each C-MSN bank CNN");
    app->add_option("--fcn-epochs", fcn_epochs, "epoch cap of each C-MSN stage FCN");
    app->add_option("--max-epochs", max_epochs, "epoch cap of the baseline networks");
    app->add_option("--patience", patience, "baseline early stop after this many epochs without improvement");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--mu", mu, "initial Levenberg-Marquardt damping");
    app->add_option("--vote", vote, "committee vote: label or score-average");
  }

  json build(const std::string& default_out) const {
    json j = config.empty() ? json::object() : read_json(config);
    if (!j.is_object())
      config_failure(config + ": the run config must be a JSON object");
    if (!data.empty() && !spec.empty())
      config_failure("--data and --spec are mutually exclusive");
    if (!data.empty())
      j["data"] = {{"manifest", data}};
    if (!spec.empty())
      j["data"] = {{"generate", read_json(spec)}};
    json& m = j["method"];
    if (m.is_null())
      m = json::object();
    if (!method.empty())
      m["method"] = method;
    if (seed)
      j["seed"] = *seed;
    if (workers)
      j["workers"] = *workers;
    if (num_classes)
      j["classes"] = *num_classes;
    if (members) {
      m["cmsn"]["members"] = *members;
      m["members"] = *members;
    }
    if (groups)
      m["cmsn"]["groups"] = *groups;
    if (stages)
      m["cmsn"]["stages"] = *stages;
    if (!schedule.empty())
      m["cmsn"]["schedule"] = parse_doubles(schedule);
    if (cnn_epochs)
      m["cmsn"]["cnn_epochs"] = *cnn_epochs;
    if (fcn_epochs)
      m["cmsn"]["fcn_epochs"] = *fcn_epochs;
    if (max_epochs) {
      m["cnn"]["max_epochs"] = *max_epochs;
      m["fcn"]["max_epochs"] = *max_epochs;
    }
    if (patience) {
      m["cnn"]["patience"] = *patience;
      m["fcn"]["patience"] = *patience;
    }
    if (lr) {
      m["cmsn"]["adam"]["learning_rate"] = *lr;
      m["cnn"]["adam"]["learning_rate"] = *lr;
      m["fcn"]["adam"]["learning_rate"] = *lr;
    }
    if (mu)
      m["cmsn"]["lm"]["mu_initial"] = *mu;
    if (!vote.empty())
      m["vote"] = vote;
    if (!out.empty() || !j.contains("output"))
      j["output"] = out.empty() ? default_out : out;
    j["output"] = output_path(j["output"].get<std::string>(), default_out);
    return j;
  }
};

RunPtr resolve(const json& j) {
  cmst_run* run = nullptr;
  check(cmst_run_resolve(j.dump().c_str(), &run));
  return RunPtr(run);
}

std::string resolved_json(const cmst_run* run) {
  char* text = nullptr;
  check(cmst_run_to_json(run, &text));
  return StringPtr(text).get();
}

DatasetPtr open_data(const cmst_run* run) {
  cmst_dataset* d = nullptr;
  check(cmst_dataset_open(run, &d));
  return DatasetPtr(d);
}

// Every run leaves a snapshot that replays it exactly.
void write_snapshot(const cmst_run* run, const fs::path& dir) { write_file(dir / "resolved_config.json", resolved_json(run)); }

int cmd_gen_data(const std::string& spec, std::optional<std::uint64_t> seed, std::optional<std::size_t> classes,
                 std::optional<double> difficulty, std::optional<std::size_t> samples, const std::string& out_flag) {
  json g = spec.empty() ? json{{"benchmark", {{"classes", 17}, {"difficulty", 1.0}}}} : read_json(spec);
  if (!g.is_object())
    config_failure("the generator spec must be a JSON object");
  if (classes || difficulty) {
    if (!g.contains("benchmark"))
      config_failure("--classes and --difficulty apply to benchmark specs only");
    if (classes)
      g["benchmark"]["classes"] = *classes;
    if (difficulty)
      g["benchmark"]["difficulty"] = *difficulty;
  }
  if (samples)
    g["samples_per_class"] = *samples;
  if (seed)
    g["seed"] = *seed;
  if (!g.contains("seed"))
    config_failure("a seed is required (--seed or \"seed\" in the spec)");
  const std::string out = output_path(out_flag, "data");
  // Resolve through a run config so the snapshot has every default filled in.
  const json run_json = {{"seed", g["seed"]}, {"data", {{"generate", g}}}, {"output", out}, {"workers", 1}};
  const RunPtr run = resolve(run_json);
  const DatasetPtr data = open_data(run.get());
  check(cmst_dataset_save(data.get(), out.c_str()));
  check(cmst_dataset_write_signal_table(data.get(), (fs::path(out) / "signal_table.csv").string().c_str()));
  write_snapshot(run.get(), out);
  std::size_t c = 0, n = 0, w = 0;
  check(cmst_dataset_shape(data.get(), &c, &n, &w));
  std::cout << "wrote " << c * n << " fingerprints (" << c << " classes x " << n << ") to "
            << (fs::path(out) / "manifest.json").string() << "\n";
  return kOk;
}

int cmd_train(const RunFlags& flags) {
  const RunPtr run = resolve(flags.build("model"));
  const std::string out = cmst_run_output(run.get());
  const DatasetPtr data = open_data(run.get());
  cmst_model* raw = nullptr;
  check(cmst_train(run.get(), data.get(), &raw));
  const ModelPtr model(raw);
  check(cmst_model_save(model.get(), out.c_str()));
  write_snapshot(run.get(), out);
  char* info = nullptr;
  check(cmst_model_info(model.get(), &info));
  const json j = json::parse(StringPtr(info).get());
  std::cout << "trained " << j["method"].get<std::string>() << " on " << j["classes"] << " classes; model "
            << j["model_hash"].get<std::string>() << " in " << out << "\n";
  return kOk;
}

void print_reports(const std::string& report) {
  const json j = json::parse(report);
  for (const auto& r : j.at("reports")) {
    std::printf("%-14s C=%-3zu trials=%-3zu failed=%-2zu mean=%.4f std=%.4f seconds=%.2f\n",
                r["method"].get<std::string>().c_str(), r["classes"].get<std::size_t>(),
                r["trial_count"].get<std::size_t>(), r["failed_trials"].get<std::size_t>(),
                r["mean_accuracy"].get<double>(), r["std_accuracy"].get<double>(), r["mean_seconds"].get<double>());
  }
}

int cmd_eval(RunFlags flags, std::optional<std::size_t> repeats, std::optional<std::size_t> folds,
             const std::string& classes, bool parallel_trials, const std::string& model_dir) {
  json j = flags.build("eval");
  if (repeats)
    j["eval"]["repeats"] = *repeats;
  if (folds)
    j["eval"]["max_folds"] = *folds;
  if (!classes.empty())
    j["eval"]["classes"] = classes;
  if (parallel_trials)
    j["eval"]["parallel_trials"] = true;
  const RunPtr run = resolve(j);
  const std::string out = cmst_run_output(run.get());
  const DatasetPtr data = open_data(run.get());
  char* report = nullptr;
  if (model_dir.empty()) {
    check(cmst_eval(run.get(), data.get(), &report));
  } else {
    cmst_model* raw = nullptr;
    check(cmst_model_load(model_dir.c_str(), &raw));
    const ModelPtr model(raw);
    check(cmst_eval_model(model.get(), data.get(), &report));
  }
  const StringPtr owned(report);
  check(cmst_report_write(report, out.c_str()));
  write_snapshot(run.get(), out);
  print_reports(report);
  const json r = json::parse(report);
  std::size_t failed = 0;
  for (const auto& x : r.at("reports"))
    failed += x["failed_trials"].get<std::size_t>();
  if (failed) {
    std::cerr << failed << " trial(s) failed; see " << (fs::path(out) / "report.json").string() << "\n";
    return kTraining;
  }
  return kOk;
}

int cmd_bench(RunFlags flags, const std::string& cores, std::optional<std::size_t> repetitions) {
  json j = flags.build("bench");
  if (!cores.empty())
    j["bench"]["workers"] = cores;
  if (repetitions)
    j["bench"]["repetitions"] = *repetitions;
  const RunPtr run = resolve(j);
  const std::string out = cmst_run_output(run.get());
  const DatasetPtr data = open_data(run.get());
  char* report = nullptr;
  check(cmst_bench(run.get(), data.get(), &report));
  const StringPtr owned(report);
  check(cmst_report_write(report, out.c_str()));
  write_snapshot(run.get(), out);
  for (const auto& r : json::parse(report).at("rows"))
    std::printf("workers=%-3zu seconds=%.3f speedup=%.3f hash=%s%s\n", r["workers"].get<std::size_t>(),
                r["seconds"].get<double>(), r["speedup"].get<double>(), r["model_hash"].get<std::string>().c_str(),
                r["oversubscribed"].get<bool>() ? " (oversubscribed)" : "");
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_flag) {
  const std::string out = output_path(out_flag, "comparison.csv");
  std::vector<const char*> paths;
  for (const auto& p : inputs)
    paths.push_back(p.c_str());
  check(cmst_report_merge(paths.data(), paths.size(), out.c_str()));
  std::cout << "merged " << inputs.size() << " report(s) into " << out << "\n";
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees multi-megabyte activations every batch. Keep
  // them in the heap instead of unmapping and faulting them back in each time.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  CLI::App app{"Convolutional multistage network training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cmst_version());
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress lines");

  auto* gen = app.add_subcommand("gen-data", "synthesize a radar fingerprint dataset");
  std::string gen_spec, gen_out;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_classes, gen_samples;
  std::optional<double> gen_difficulty;
  gen->add_option("--spec", gen_spec, "generator spec JSON (default: the built-in benchmark)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--classes", gen_classes, "benchmark class count");
  gen->add_option("--difficulty", gen_difficulty, "benchmark difficulty in [0, 1]");
  gen->add_option("--samples", gen_samples, "samples per class");
  gen->add_option("--out", gen_out, "output directory");

  RunFlags train_flags, eval_flags, bench_flags;
  auto* train = app.add_subcommand("train", "train a model on a whole dataset");
  train_flags.add_to(train);

  auto* eval = app.add_subcommand("eval", "cross-validate a method or score a saved model");
  eval_flags.add_to(eval);
  std::optional<std::size_t> repeats, folds;
  std::string sweep, model_dir;
  bool parallel_trials = false;
  eval->add_option("--repeats", repeats, "LOOCV repeats");
  eval->add_option("--folds", folds, "evaluate only the first n folds");
  eval->add_option("--classes", sweep, "class-count sweep, e.g. 8..17");
  eval->add_flag("--parallel-trials", parallel_trials, "run trials concurrently");
  eval->add_option("--model", model_dir, "score this saved model instead of cross-validating");

  auto* bench = app.add_subcommand("bench", "time training at several worker counts");
  bench_flags.add_to(bench);
  std::string cores;
  std::optional<std::size_t> repetitions;
  bench->add_option("--cores", cores, "worker counts, e.g. 1,2,4");
  bench->add_option("--repetitions", repetitions, "timed runs per worker count");

  auto* report = app.add_subcommand("report", "merge eval reports into one comparison table");
  std::vector<std::string> report_inputs;
  std::string report_out;
  report->add_option("reports", report_inputs, "report.json files")->required();
  report->add_option("--out", report_out, "comparison CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (!quiet)
    cmst_set_log(log_to_stderr, nullptr);

  try {
    if (*gen)
      return cmd_gen_data(gen_spec, gen_seed, gen_classes, gen_difficulty, gen_samples, gen_out);
    if (*train)
      return cmd_train(train_flags);
    if (*eval)
      return cmd_eval(eval_flags, repeats, folds, sweep, parallel_trials, model_dir);
    if (*bench)
      return cmd_bench(bench_flags, cores, repetitions);
    if (*report)
      return cmd_report(report_inputs, report_out);
  } catch (const Failure& f) {
    std::cerr << "cmst: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "cmst: internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
