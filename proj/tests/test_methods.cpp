// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/error.hpp"
#include "cmst/methods.hpp"
#include "cmst/serialize.hpp"

#include "doctest.h"
#include "toy.hpp"

#include <filesystem>

using namespace cmst;
namespace fs = std::filesystem;

namespace {

const MethodKind kAll[] = {MethodKind::cmsn, MethodKind::cnn, MethodKind::cnn_committee, MethodKind::fcn,
                           MethodKind::fcn_committee};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cmst_methods_" + name);
  fs::remove_all(p);
  return p;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    n += e.is_regular_file() && e.path().extension() == ext;
  return n;
}

} // namespace

TEST_CASE("method names round-trip") {
  for (auto k : kAll)
    CHECK(method_kind_from_string(to_string(k)) == k);
  CHECK(to_string(MethodKind::cnn_committee) == "cnn-committee");
  CHECK_THROWS_AS(method_kind_from_string("svm"), ConfigError);
}

TEST_CASE("method config json round-trip and partial overrides") {
  MethodConfig c = toy::method(MethodKind::fcn_committee, 4);
  c.vote = baselines::VoteRule::score_average;
  const auto back = method_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.hash() == c.hash());

  const auto partial = method_config_from_json(nlohmann::json::parse(R"({"method": "cnn-committee", "members": 12})"));
  CHECK(partial.kind == MethodKind::cnn_committee);
  CHECK(partial.members == 12);
  CHECK(partial.cnn.max_epochs == 50);
  CHECK_THROWS_AS(method_config_from_json(nlohmann::json::parse(R"({"vote": "maybe"})")), ConfigError);
  CHECK_THROWS_AS(method_config_from_json(nlohmann::json::parse(R"({"members": "x"})")), ConfigError);
  CHECK_THROWS_AS(method_config_from_json(nlohmann::json::array()), ConfigError);
}

TEST_CASE("config hash covers only the active method") {
  MethodConfig a = toy::method(MethodKind::fcn, 3);
  MethodConfig b = a;
  b.cnn.max_epochs = 7;
  CHECK(a.hash() == b.hash());
  b.fcn.max_epochs = 7;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("adapted config follows the dataset") {
  const MethodConfig c = MethodConfig{}.adapted(9, 9600);
  CHECK(c.cmsn.classes() == 9);
  CHECK(c.cnn.arch.classes == 9);
  CHECK(c.fcn.classes == 9);
  CHECK(c.fcn.input_width == 9600);
  CHECK(c.cnn.arch.input_length == 9600);
}

TEST_CASE("committee validation") {
  MethodConfig c = toy::method(MethodKind::cnn_committee, 2);
  c.members = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.kind = MethodKind::cnn;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("every method trains, saves and reloads with identical predictions") {
  const auto data = toy::sinusoids(3, 6, 96, 31);
  for (auto kind : kAll) {
    CAPTURE(to_string(kind));
    const auto model = train_classifier(toy::method(kind, 3), data.inputs, data.labels, 5);
    CHECK(model->kind() == kind);
    CHECK(model->classes() == 3);
    CHECK(model->input_width() == 96);
    const auto pred = model->classify(data.inputs, data.labels.size());
    CHECK(pred.size() == data.labels.size());

    const fs::path dir = scratch(to_string(kind));
    model->save(dir);
    const auto back = load_classifier(dir);
    CHECK(back->kind() == kind);
    CHECK(back->model_hash() == model->model_hash());
    CHECK(back->classify(data.inputs, data.labels.size()) == pred);
    CHECK(fs::exists(dir / "history.csv"));
    CHECK(read_json_file(dir / "manifest.json").at("method") == to_string(kind));

    // Saving the same model twice gives the same bytes.
    const fs::path again = scratch(to_string(kind) + "_again");
    back->save(again);
    CHECK(hash_tree(again) == hash_tree(dir));

    CHECK_THROWS_AS(model->classify(std::vector<double>(95), 1), ShapeError);
    fs::remove_all(dir);
    fs::remove_all(again);
  }
}

TEST_CASE("model directory layouts") {
  const auto data = toy::sinusoids(2, 4, 96, 32);
  const fs::path fcn_dir = scratch("layout_fcn");
  train_classifier(toy::method(MethodKind::fcn, 2), data.inputs, data.labels, 1)->save(fcn_dir);
  CHECK(count_files(fcn_dir, ".bin") == 1);
  CHECK(fs::exists(fcn_dir / "network.bin"));

  const fs::path com_dir = scratch("layout_committee");
  train_classifier(toy::method(MethodKind::cnn_committee, 2), data.inputs, data.labels, 1)->save(com_dir);
  CHECK(count_files(com_dir, ".bin") == 3);

  const fs::path cmsn_dir = scratch("layout_cmsn");
  train_classifier(toy::method(MethodKind::cmsn, 2), data.inputs, data.labels, 1)->save(cmsn_dir);
  CHECK(count_files(cmsn_dir / "cnn", ".bin") == 2);
  CHECK(count_files(cmsn_dir / "stage_2", ".bin") == 4);
  CHECK(count_files(cmsn_dir / "stage_3", ".bin") == 4);
  for (const auto& d : {fcn_dir, com_dir, cmsn_dir})
    fs::remove_all(d);
}

TEST_CASE("the seed argument decides the model") {
  const auto data = toy::sinusoids(2, 4, 96, 33);
  const auto cfg = toy::method(MethodKind::cmsn, 2);
  const auto a = train_classifier(cfg, data.inputs, data.labels, 1);
  const auto b = train_classifier(cfg, data.inputs, data.labels, 1);
  const auto c = train_classifier(cfg, data.inputs, data.labels, 2);
  CHECK(a->model_hash() == b->model_hash());
  CHECK(a->model_hash() != c->model_hash());
}

TEST_CASE("loading rejects foreign directories") {
  const fs::path dir = scratch("foreign");
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_classifier(dir), IoError);
  write_text_file(dir / "manifest.json", R"({"format": "cmst-dataset"})");
  CHECK_THROWS_AS(load_classifier(dir), DataError);
  write_text_file(dir / "manifest.json", R"({"format": "cmst-model", "method": "svm"})");
  CHECK_THROWS_AS(load_classifier(dir), DataError);
  write_text_file(dir / "manifest.json", R"({"format": "cmst-model", "version": 1, "method": "fcn", "networks": []})");
  CHECK_THROWS_AS(load_classifier(dir), DataError);
  fs::remove_all(dir);
}
