// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

// Exercises the shared library strictly through its C interface.

#include "cmst/cmst.h"

#include "doctest.h"
#include "json.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config() {
  std::ifstream in(CMST_TEST_DATA "/tiny_run.json");
  REQUIRE(in);
  return json::parse(in);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmst_capi_" + name);
  fs::remove_all(p);
  return p;
}

std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out(s);
  cmst_string_free(s);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Fixture {
  cmst_run* run = nullptr;
  cmst_dataset* data = nullptr;

  explicit Fixture(const json& config) {
    REQUIRE(cmst_run_resolve(config.dump().c_str(), &run) == CMST_OK);
    REQUIRE(cmst_dataset_open(run, &data) == CMST_OK);
  }
  ~Fixture() {
    cmst_dataset_free(data);
    cmst_run_free(run);
  }
};

} // namespace

TEST_CASE("status names and version") {
  CHECK(std::strlen(cmst_version()) > 0);
  CHECK(std::string(cmst_status_name(CMST_OK)) == "ok");
  CHECK(std::string(cmst_status_name(CMST_ERROR_CONFIG)) != std::string(cmst_status_name(CMST_ERROR_DATA)));
  cmst_string_free(nullptr);
  cmst_run_free(nullptr);
  cmst_dataset_free(nullptr);
  cmst_model_free(nullptr);
}

TEST_CASE("configuration failures report CONFIG with a message") {
  cmst_run* run = nullptr;
  CHECK(cmst_run_resolve("{not json", &run) == CMST_ERROR_CONFIG);
  CHECK(run == nullptr);
  CHECK(std::strlen(cmst_last_error()) > 0);

  json j = tiny_config();
  j.erase("seed");
  CHECK(cmst_run_resolve(j.dump().c_str(), &run) == CMST_ERROR_CONFIG);
  CHECK(std::string(cmst_last_error()).find("seed") != std::string::npos);

  j = tiny_config();
  j["method"]["cmsn"]["stagess"] = 3;
  CHECK(cmst_run_resolve(j.dump().c_str(), &run) == CMST_ERROR_CONFIG);
  CHECK(std::string(cmst_last_error()).find("stagess") != std::string::npos);

  j = tiny_config();
  j["method"]["method"] = "svm";
  CHECK(cmst_run_resolve(j.dump().c_str(), &run) == CMST_ERROR_CONFIG);
}

TEST_CASE("null arguments are rejected") {
  CHECK(cmst_run_resolve(nullptr, nullptr) == CMST_ERROR_ARGUMENT);
  cmst_dataset* d = nullptr;
  CHECK(cmst_dataset_open(nullptr, &d) == CMST_ERROR_ARGUMENT);
  CHECK(cmst_model_classify(nullptr, nullptr, 0, 0, nullptr) == CMST_ERROR_ARGUMENT);
}

TEST_CASE("missing data surfaces as DATA or IO") {
  json j = tiny_config();
  j["data"] = {{"manifest", "/nonexistent/manifest.json"}};
  cmst_run* run = nullptr;
  CHECK(cmst_run_resolve(j.dump().c_str(), &run) == CMST_ERROR_DATA);
  cmst_dataset* d = nullptr;
  const cmst_status s = cmst_dataset_load("/nonexistent/manifest.json", &d);
  CHECK((s == CMST_ERROR_DATA || s == CMST_ERROR_IO));
}

TEST_CASE("resolution materializes defaults and replays") {
  cmst_run* run = nullptr;
  REQUIRE(cmst_run_resolve(tiny_config().dump().c_str(), &run) == CMST_OK);
  char* text = nullptr;
  REQUIRE(cmst_run_to_json(run, &text) == CMST_OK);
  const std::string first = take(text);
  const json resolved = json::parse(first);
  CHECK(resolved["method"]["cmsn"]["lm"].contains("mu_initial"));
  CHECK(resolved["data"]["generate"]["classes"].size() == 3);
  CHECK(resolved["data"]["generate"]["seed"] == 11);  // inherited from the run seed
  cmst_run_free(run);

  REQUIRE(cmst_run_resolve(first.c_str(), &run) == CMST_OK);
  REQUIRE(cmst_run_to_json(run, &text) == CMST_OK);
  CHECK(take(text) == first);
  cmst_run_free(run);
}

TEST_CASE("dataset shape, rows, save and reload") {
  Fixture f(tiny_config());
  size_t c = 0, n = 0, w = 0;
  REQUIRE(cmst_dataset_shape(f.data, &c, &n, &w) == CMST_OK);
  CHECK(c == 3);
  CHECK(n == 4);
  CHECK(w == 9600);
  std::vector<double> rows(c * n * w);
  std::vector<int> labels(c * n);
  REQUIRE(cmst_dataset_rows(f.data, rows.data(), labels.data()) == CMST_OK);
  CHECK(labels.front() == 0);
  CHECK(labels.back() == 2);

  const fs::path dir = scratch("dataset");
  REQUIRE(cmst_dataset_save(f.data, dir.string().c_str()) == CMST_OK);
  REQUIRE(cmst_dataset_write_signal_table(f.data, (dir / "signal_table.csv").string().c_str()) == CMST_OK);
  CHECK(fs::exists(dir / "signal_table.csv"));
  cmst_dataset* again = nullptr;
  REQUIRE(cmst_dataset_load((dir / "manifest.json").string().c_str(), &again) == CMST_OK);
  std::vector<double> rows2(rows.size());
  std::vector<int> labels2(labels.size());
  REQUIRE(cmst_dataset_rows(again, rows2.data(), labels2.data()) == CMST_OK);
  CHECK(labels2 == labels);
  double worst = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    worst = std::max(worst, std::abs(rows[i] - rows2[i]));
  CHECK(worst < 1e-9);
  cmst_dataset_free(again);
}

TEST_CASE("class subset keeps the first classes") {
  json j = tiny_config();
  j["classes"] = 2;
  Fixture f(j);
  size_t c = 0, n = 0, w = 0;
  REQUIRE(cmst_dataset_shape(f.data, &c, &n, &w) == CMST_OK);
  CHECK(c == 2);

  j["classes"] = 5;
  cmst_run* run = nullptr;
  REQUIRE(cmst_run_resolve(j.dump().c_str(), &run) == CMST_OK);
  cmst_dataset* d = nullptr;
  CHECK(cmst_dataset_open(run, &d) == CMST_ERROR_CONFIG);
  cmst_run_free(run);
}

TEST_CASE("train, save, load and classify") {
  for (const char* method : {"cmsn", "fcn", "cnn-committee"}) {
    CAPTURE(method);
    json j = tiny_config();
    j["method"]["method"] = method;
    Fixture f(j);
    cmst_model* model = nullptr;
    REQUIRE(cmst_train(f.run, f.data, &model) == CMST_OK);
    char* info = nullptr;
    REQUIRE(cmst_model_info(model, &info) == CMST_OK);
    const json meta = json::parse(take(info));
    CHECK(meta["method"] == method);
    CHECK(meta["classes"] == 3);
    CHECK(meta["input_width"] == 9600);

    const fs::path dir = scratch(std::string("model_") + method);
    REQUIRE(cmst_model_save(model, dir.string().c_str()) == CMST_OK);
    cmst_model* loaded = nullptr;
    REQUIRE(cmst_model_load(dir.string().c_str(), &loaded) == CMST_OK);
    REQUIRE(cmst_model_info(loaded, &info) == CMST_OK);
    CHECK(json::parse(take(info))["model_hash"] == meta["model_hash"]);

    std::vector<double> rows(12 * 9600);
    std::vector<int> labels(12), a(12), b(12);
    REQUIRE(cmst_dataset_rows(f.data, rows.data(), labels.data()) == CMST_OK);
    REQUIRE(cmst_model_classify(model, rows.data(), 12, 9600, a.data()) == CMST_OK);
    REQUIRE(cmst_model_classify(loaded, rows.data(), 12, 9600, b.data()) == CMST_OK);
    CHECK(a == b);
    for (int p : a)
      CHECK((p >= 0 && p < 3));
    CHECK(cmst_model_classify(model, rows.data(), 12, 9599, a.data()) == CMST_ERROR_SHAPE);

    char* report = nullptr;
    REQUIRE(cmst_eval_model(loaded, f.data, &report) == CMST_OK);
    const json r = json::parse(take(report));
    CHECK(r["format"] == "cmst-eval");
    CHECK(r["reports"][0]["trial_count"] == 1);
    cmst_model_free(loaded);
    cmst_model_free(model);
  }
}

TEST_CASE("training twice writes identical files") {
  Fixture f(tiny_config());
  std::vector<std::string> hashes;
  for (int k = 0; k < 2; ++k) {
    cmst_model* model = nullptr;
    REQUIRE(cmst_train(f.run, f.data, &model) == CMST_OK);
    const fs::path dir = scratch("twice_" + std::to_string(k));
    REQUIRE(cmst_model_save(model, dir.string().c_str()) == CMST_OK);
    cmst_model_free(model);
    std::string all;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file())
        files.push_back(fs::relative(e.path(), dir));
    std::sort(files.begin(), files.end());
    for (const auto& p : files)
      all += p.string() + "\n" + read_file(dir / p);
    hashes.push_back(all);
  }
  CHECK(hashes[0] == hashes[1]);
}

TEST_CASE("eval, bench and report files") {
  json j = tiny_config();
  j["method"]["method"] = "fcn";
  j["eval"]["max_folds"] = 2;
  Fixture f(j);
  std::vector<std::string> lines;
  cmst_set_log([](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); },
               &lines);
  char* report = nullptr;
  REQUIRE(cmst_eval(f.run, f.data, &report) == CMST_OK);
  cmst_set_log(nullptr, nullptr);
  const std::string text = take(report);
  const json r = json::parse(text);
  CHECK(r["reports"].size() == 1);
  CHECK(r["reports"][0]["trial_count"] == 2);
  CHECK(lines.size() == 2);

  const fs::path dir = scratch("eval");
  REQUIRE(cmst_report_write(text.c_str(), dir.string().c_str()) == CMST_OK);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "summary.csv"));
  CHECK(fs::exists(dir / "confusion_fcn_c3.csv"));

  const std::string path = (dir / "report.json").string();
  const char* paths[] = {path.c_str()};
  REQUIRE(cmst_report_merge(paths, 1, (dir / "comparison.csv").string().c_str()) == CMST_OK);
  CHECK(read_file(dir / "comparison.csv").rfind("classes,fcn_mean,fcn_std\n", 0) == 0);

  REQUIRE(cmst_bench(f.run, f.data, &report) == CMST_OK);
  const std::string bench = take(report);
  const json b = json::parse(bench);
  REQUIRE(b["rows"].size() == 2);
  CHECK(b["rows"][0]["speedup"] == 1.0);
  CHECK(b["rows"][0]["model_hash"] == b["rows"][1]["model_hash"]);
  REQUIRE(cmst_report_write(bench.c_str(), dir.string().c_str()) == CMST_OK);
  CHECK(fs::exists(dir / "bench.csv"));

  CHECK(cmst_report_write("{\"format\": \"other\"}", dir.string().c_str()) == CMST_ERROR_DATA);
}
