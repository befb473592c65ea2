// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/error.hpp"
#include "cmst/mst.hpp"
#include "cmst/random.hpp"
#include "cmst/serialize.hpp"

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

using namespace cmst;
using namespace cmst::mst;
namespace fs = std::filesystem;

namespace {

struct Toy {
  std::vector<double> inputs;
  std::vector<int> labels;
};

Toy sinusoids(std::size_t classes, std::size_t per_class, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Toy t;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t i = 0; i < length; ++i)
        t.inputs.push_back(std::sin(0.05 * double((c + 1) * i)) * (1.0 + 0.5 * double(c)) + noise(rng));
      t.labels.push_back(static_cast<int>(c));
    }
  return t;
}

// Rows of `width` features where feature c is near 1 for class c.
Toy separable_rows(std::size_t classes, std::size_t per_class, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  Toy t;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t j = 0; j < width; ++j)
        t.inputs.push_back((j == c ? 1.0 : 0.0) + noise(rng));
      t.labels.push_back(static_cast<int>(c));
    }
  return t;
}

CmsnConfig toy_config(std::size_t classes, std::size_t stages) {
  CmsnConfig cfg;
  cfg.bank.arch.input_length = 96;
  cfg.bank.arch.filters = {2, 3, 3, 4};
  cfg.bank.arch.kernel = 3;
  cfg.bank.arch.pool = 2;
  cfg.bank.arch.dense_units = 6;
  cfg.bank.arch.dropout = 0.2;
  cfg.bank.arch.classes = classes;
  cfg.bank.members = 3;
  cfg.bank.adam.learning_rate = 0.01;
  cfg.bank.adam.batch_size = 8;
  cfg.groups = 2;
  cfg.stages = stages;
  const std::vector<double> full = {0.05, 0.02, 0.005};
  cfg.schedule.assign(full.begin(), full.begin() + std::ptrdiff_t(stages - 1));
  cfg.seed = 77;
  return cfg;
}

std::vector<std::uint64_t> seeds_for(std::size_t n, std::uint64_t base) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < n; ++i)
    s.push_back(derive_seed(base, {i}));
  return s;
}

} // namespace

TEST_CASE("build_stage_targets") {
  CHECK(build_stage_targets(std::vector<int>{0, 1, 0}, 0) == std::vector<double>{1, 0, 1});
  CHECK(build_stage_targets(std::vector<int>{2, 2}, 2) == std::vector<double>{1, 1});
  std::vector<int> labels;
  for (int c = 0; c < 17; ++c)
    for (int k = 0; k < 11; ++k)
      labels.push_back(c);
  for (int c = 0; c < 17; ++c) {
    const auto t = build_stage_targets(labels, c);
    CHECK(t.size() == 187);
    CHECK(std::count(t.begin(), t.end(), 1.0) == 11);
  }
}

TEST_CASE("default structure: 12 CNNs and 3 stages of 68 FCNs") {
  const CmsnModel m = build_cmsn(CmsnConfig{});
  CHECK(m.bank.size() == 12);
  CHECK(m.bank.feature_width() == 204);
  REQUIRE(m.stages.size() == 3);
  CHECK(m.stages[0].input_width == 204);
  for (const auto& st : m.stages) {
    CHECK(st.fcns.size() == 68);
    CHECK(st.fcns.front().arch.output().size() == 1);
  }
  CHECK(m.stages[1].input_width == 68);
  CHECK(m.stages[2].input_width == 68);
  CHECK(m.stages[0].spec.target_error == 0.05);
  CHECK(m.stages[2].spec.target_error == 0.005);
}

TEST_CASE("structural widths hold for many configurations") {
  for (std::size_t k : {1, 3, 12})
    for (std::size_t c : {2, 5, 17})
      for (std::size_t g : {1, 4}) {
        const Layout l{k, c, g};
        CHECK(l.stage_input_width(2) == k * c);
        CHECK(l.stage_input_width(3) == c * g);
        CHECK(l.stage_input_width(7) == c * g);
        CHECK(l.networks_per_stage() == c * g);
      }
}

TEST_CASE("incremental extension keeps later-stage slots in place") {
  const Layout before{12, 17, 4};
  const Layout after{12, 18, 4};
  CHECK(after.networks_per_stage() - before.networks_per_stage() == 4);
  for (std::size_t c = 0; c < 17; ++c)
    for (std::size_t g = 0; g < 4; ++g)
      CHECK(after.fcn_slot(c, g) == before.fcn_slot(c, g));

  CmsnConfig cfg;
  const auto old_width = build_cmsn(cfg).bank.members.front().arch.output().size();
  cfg.bank.arch.classes = 18;
  const CmsnModel grown = build_cmsn(cfg);
  CHECK(grown.bank.members.front().arch.output().size() == old_width + 1);
  CHECK(grown.stages[1].fcns.size() == 72);

  // Stage 2 reads member-major features, so slots of members after the first
  // move by one per preceding member when a class is added.
  CHECK(after.bank_slot(0, 5) == before.bank_slot(0, 5));
  CHECK(after.bank_slot(3, 5) == before.bank_slot(3, 5) + 3);
}

TEST_CASE("schedule validation") {
  CmsnConfig cfg;
  cfg.schedule = {0.05, 0.05, 0.005};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.schedule = {0.05, 0.06, 0.005};
  CHECK_THROWS_AS(build_cmsn(cfg), ConfigError);
  cfg.schedule = {0.05, 0.02};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.schedule = {};
  cfg.stages = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CmsnConfig{};
  cfg.groups = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(CmsnConfig{}.validate());
}

TEST_CASE("config json round trip") {
  CmsnConfig cfg = toy_config(3, 3);
  cfg.lm.mu_initial = 0.01;
  const auto back = cmsn_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.bank.arch == cfg.bank.arch);
  const auto partial = cmsn_config_from_json(nlohmann::json::parse(R"({"groups": 3, "seed": 5})"));
  CHECK(partial.groups == 3);
  CHECK(partial.seed == 5);
  CHECK(partial.bank.members == 12);
}

TEST_CASE("group averaging and tie-break") {
  const auto s = average_groups(std::vector<double>{0.9, 1.0, 0.8, 0.9}, 1, 4);
  CHECK(s.scores[0] == doctest::Approx(0.9).epsilon(1e-14));
  const auto tie = average_groups(std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, 3, 2);
  CHECK(tie.label == 0);
  const auto s2 = average_groups(std::vector<double>{0.1, 0.3, 0.9, 0.7, 0.9, 0.7}, 3, 2);
  CHECK(s2.label == 1);
  CHECK_THROWS_AS(average_groups(std::vector<double>{1, 2, 3}, 2, 2), ShapeError);
}

TEST_CASE("train_stage over 17 classes yields 68 FCNs") {
  const Toy t = separable_rows(17, 2, 17, 1);
  StageSpec spec;
  spec.groups = 4;
  const Stage st = train_stage(spec, 17, t.inputs, t.labels.size(), t.labels, seeds_for(68, 3), optim::LmConfig{});
  CHECK(st.fcns.size() == 68);
  const auto out = stage_forward(st, t.inputs, t.labels.size());
  CHECK(out.size() == t.labels.size() * 68);
  const auto one = stage_forward(st, std::span<const double>(t.inputs).subspan(0, 17), 1);
  CHECK(one.size() == 68);
  // Class-major, group-minor: slot c*G+g is FCN (c, g).
  for (std::size_t j = 0; j < 68; ++j)
    CHECK(one[j] == optim::predict_all(st.fcns[j], std::span<const double>(t.inputs).subspan(0, 17), 1)[0]);
}

TEST_CASE("two-class separable stage reaches the stage-2 target within 3 epochs") {
  // Oracle run: both FCNs stop below 0.05 MSE, pinned as the regression.
  const Toy t = separable_rows(2, 10, 4, 2);
  StageSpec spec;
  spec.groups = 1;
  spec.target_error = 0.05;
  const Stage st = train_stage(spec, 2, t.inputs, t.labels.size(), t.labels, seeds_for(2, 4), optim::LmConfig{});
  for (const auto& h : st.history) {
    CHECK(h.size() <= 3);
    CHECK(h.back().train_error < 0.05);
  }
}

TEST_CASE("identical seeds give identical FCNs") {
  const Toy t = separable_rows(2, 6, 3, 5);
  StageSpec spec;
  spec.groups = 2;
  const std::vector<std::uint64_t> seeds = {9, 9, 10, 11};
  const Stage st = train_stage(spec, 2, t.inputs, t.labels.size(), t.labels, seeds, optim::LmConfig{});
  CHECK(st.fcns[0] == st.fcns[1]);
  CHECK(!(st.fcns[0] == st.fcns[2]));
}

TEST_CASE("an FCN trained on all-zero targets outputs about 0") {
  const Toy t = separable_rows(1, 12, 3, 6);  // every label is 0, so class 1 never fires
  StageSpec spec;
  spec.groups = 1;
  spec.target_error = 0.0;
  const Stage st = train_stage(spec, 2, t.inputs, t.labels.size(), t.labels, seeds_for(2, 7), optim::LmConfig{});
  const auto out = stage_forward(st, t.inputs, t.labels.size());
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    CHECK(std::abs(out[i * 2 + 1]) < 1e-3);
    CHECK(std::abs(out[i * 2 + 0] - 1.0) < 1e-3);
  }
}

TEST_CASE("relabeling classes permutes the output blocks") {
  const Toy t = separable_rows(3, 4, 3, 8);
  Toy swapped = t;
  for (auto& l : swapped.labels)
    l = l == 0 ? 1 : (l == 1 ? 0 : l);
  StageSpec spec;
  spec.groups = 2;
  const auto seeds = seeds_for(6, 9);
  const std::vector<std::uint64_t> swapped_seeds = {seeds[2], seeds[3], seeds[0], seeds[1], seeds[4], seeds[5]};
  const Stage a = train_stage(spec, 3, t.inputs, 12, t.labels, seeds, optim::LmConfig{});
  const Stage b = train_stage(spec, 3, t.inputs, 12, swapped.labels, swapped_seeds, optim::LmConfig{});
  const auto oa = stage_forward(a, t.inputs, 12);
  const auto ob = stage_forward(b, t.inputs, 12);
  const std::size_t perm[6] = {2, 3, 0, 1, 4, 5};
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      CHECK(oa[i * 6 + j] == ob[i * 6 + perm[j]]);
}

TEST_CASE("minimal two-class C-MSN trains and predicts") {
  const Toy t = sinusoids(2, 8, 96, 10);
  const CmsnModel m = train_cmsn(toy_config(2, 2), t.inputs, t.labels);
  CHECK(m.stages.size() == 1);
  const auto scores = predict_batch(m, t.inputs, t.labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    correct += scores[i].label == t.labels[i];
  // Oracle run: 16 of 16 training samples.
  CHECK(double(correct) / double(scores.size()) > 0.5);
  CHECK(correct >= 15);
  const auto single = predict(m, std::span<const double>(t.inputs).subspan(0, 96));
  // Batch size changes the summation order inside the dense kernels.
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(single.scores[c] == doctest::Approx(scores[0].scores[c]).epsilon(1e-12));
}

TEST_CASE("per-stage training error does not increase on the toy set") {
  // Oracle run on this frozen toy: 0.0266, 0.0080, 0.0012. Across 18 probe
  // toys the stage-to-stage decrease held in 13 and last < first in all 18,
  // so the strict chain is pinned only for this seed.
  const Toy t = sinusoids(3, 12, 96, 10);
  const CmsnModel m = train_cmsn(toy_config(3, 4), t.inputs, t.labels);
  REQUIRE(m.stages.size() == 3);
  for (std::size_t s = 1; s < m.stages.size(); ++s)
    CHECK(m.stages[s].mean_train_error() <= m.stages[s - 1].mean_train_error());
  CHECK(m.stages.back().mean_train_error() < 0.005);
}

TEST_CASE("C-MSN training is bit-identical across worker counts") {
  const Toy t = sinusoids(3, 4, 96, 12);
  const CmsnConfig cfg = toy_config(3, 3);
  const CmsnModel serial = train_cmsn(cfg, t.inputs, t.labels);
  WorkerPool pool(4);
  const CmsnModel parallel = train_cmsn(cfg, t.inputs, t.labels, &pool);
  for (std::size_t k = 0; k < serial.bank.size(); ++k)
    CHECK(serial.bank.members[k] == parallel.bank.members[k]);
  for (std::size_t s = 0; s < serial.stages.size(); ++s)
    for (std::size_t j = 0; j < serial.stages[s].fcns.size(); ++j)
      CHECK(serial.stages[s].fcns[j] == parallel.stages[s].fcns[j]);
  CHECK(final_outputs(serial, t.inputs, 12) == final_outputs(parallel, t.inputs, 12, &pool));
}

TEST_CASE("model save/load round trip") {
  const Toy t = sinusoids(2, 4, 96, 13);
  const CmsnModel m = train_cmsn(toy_config(2, 3), t.inputs, t.labels);
  const fs::path dir = fs::temp_directory_path() / "cmst_test_model";
  fs::remove_all(dir);
  save_model(m, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "history.csv"));
  CHECK(fs::exists(dir / "cnn" / "member_02.bin"));
  CHECK(fs::exists(dir / "stage_3" / "fcn_c01_g1.bin"));
  const CmsnModel back = load_model(dir);
  CHECK(final_outputs(back, t.inputs, 8) == final_outputs(m, t.inputs, 8));
  const std::string h = hash_tree(dir);
  save_model(back, dir);
  CHECK(hash_tree(dir) == h);

  std::ostringstream csv;
  write_model_history_csv(csv, m);
  CHECK(csv.str().rfind("stage,network,epoch,train_error,validation_error,step_parameter\n1,0,1,", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("C-MSN errors") {
  const Toy t = sinusoids(2, 4, 96, 14);
  std::vector<int> lonely = t.labels;
  std::fill(lonely.begin(), lonely.end() - 1, 0);
  CHECK_THROWS_AS(train_cmsn(toy_config(2, 2), t.inputs, lonely), DataError);
  const CmsnModel m = build_cmsn(toy_config(2, 2));
  CHECK_THROWS_AS(predict(m, std::vector<double>(95, 0.0)), ShapeError);
  const Stage& st = m.stages[0];
  CHECK_THROWS_AS(stage_forward(st, std::vector<double>(5, 0.0), 1), ShapeError);
}
