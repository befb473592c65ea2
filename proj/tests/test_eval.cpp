// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/error.hpp"
#include "cmst/eval.hpp"
#include "cmst/text.hpp"

#include "doctest.h"
#include "toy.hpp"

#include <cmath>
#include <set>
#include <sstream>

using namespace cmst;
using namespace cmst::eval;

namespace {

// Rows whose first value is the label; the rest is filler.
toy::Data labelled_rows(std::size_t classes, std::size_t per_class) {
  toy::Data d;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      d.inputs.push_back(double(c));
      d.inputs.push_back(double(k));
      d.labels.push_back(static_cast<int>(c));
    }
  return d;
}

// Reads the label from the first column, or always answers `constant`.
class StubClassifier final : public Classifier {
public:
  StubClassifier(std::size_t classes, int constant) : classes_(classes), constant_(constant) {}
  MethodKind kind() const override { return MethodKind::cnn; }
  std::size_t classes() const override { return classes_; }
  std::size_t input_width() const override { return 2; }
  std::vector<int> classify(std::span<const double> inputs, std::size_t count, WorkerPool*) const override {
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i)
      out[i] = constant_ >= 0 ? constant_ : static_cast<int>(inputs[i * 2]);
    return out;
  }
  void save(const std::filesystem::path&) const override {}
  std::string model_hash() const override { return "stub"; }

private:
  std::size_t classes_;
  int constant_;
};

Method stub_method(int constant = -1) {
  Method m;
  m.id = constant >= 0 ? "constant" : "oracle";
  m.config_hash = "0";
  m.train = [constant](std::span<const double>, std::span<const int>, std::size_t classes, std::uint64_t,
                       WorkerPool*) -> std::unique_ptr<Classifier> {
    return std::make_unique<StubClassifier>(classes, constant);
  };
  return m;
}

} // namespace

TEST_CASE("folds for 17 classes of 12 samples") {
  const auto d = labelled_rows(17, 12);
  const FoldPlan plan = make_folds(d.labels, 17);
  REQUIRE(plan.folds.size() == 12);
  std::multiset<std::size_t> seen;
  for (std::size_t k = 0; k < 12; ++k) {
    const auto& f = plan.folds[k];
    CHECK(f.validation.size() == 17);
    CHECK(f.train.size() == 17 * 11);
    std::set<int> classes;
    for (auto i : f.validation) {
      classes.insert(d.labels[i]);
      CHECK(d.inputs[i * 2 + 1] == double(k));  // sample k of its class
      seen.insert(i);
    }
    CHECK(classes.size() == 17);
    for (auto i : f.train)
      CHECK(std::find(f.validation.begin(), f.validation.end(), i) == f.validation.end());
  }
  // The validation sets partition the dataset.
  CHECK(seen.size() == 204);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 204);
}

TEST_CASE("folds for 2 classes of 2 samples") {
  const auto d = labelled_rows(2, 2);
  const FoldPlan plan = make_folds(d.labels, 2);
  REQUIRE(plan.folds.size() == 2);
  CHECK(plan.folds[0].validation == std::vector<std::size_t>{0, 2});
  CHECK(plan.folds[1].validation == std::vector<std::size_t>{1, 3});
}

TEST_CASE("folds reject unequal classes") {
  const std::vector<int> labels = {0, 0, 0, 1, 1};
  try {
    make_folds(labels, 2);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
  CHECK_THROWS_AS(make_folds(std::vector<int>{0, 1}, 2), DataError);
}

TEST_CASE("12 folds times 5 repeats gives 60 trials") {
  const auto d = labelled_rows(17, 12);
  LoocvOptions opt;
  opt.repeats = 5;
  opt.seed = 9;
  const EvalReport r = run_loocv(stub_method(), d.inputs, d.labels, 17, opt);
  CHECK(r.trials.size() == 60);
  CHECK(r.folds == 12);
  CHECK(r.repeats == 5);
  CHECK(r.mean_accuracy == 1.0);
  CHECK(r.std_accuracy == 0.0);
  std::set<std::uint64_t> seeds;
  for (const auto& t : r.trials) {
    seeds.insert(t.seed);
    CHECK(t.seed == trial_seed(9, t.repeat, t.fold));
  }
  CHECK(seeds.size() == 60);
  for (std::size_t i = 0; i < 17; ++i)
    for (std::size_t j = 0; j < 17; ++j)
      CHECK(r.confusion[i][j] == (i == j ? 60u : 0u));
}

TEST_CASE("constant classifier scores 1/C") {
  const auto d = labelled_rows(5, 4);
  LoocvOptions opt;
  opt.repeats = 2;
  const EvalReport r = run_loocv(stub_method(3), d.inputs, d.labels, 5, opt);
  CHECK(r.mean_accuracy == doctest::Approx(0.2).epsilon(1e-12));
  for (std::size_t i = 0; i < 5; ++i) {
    std::size_t row = 0;
    for (auto v : r.confusion[i])
      row += v;
    CHECK(row == 8);  // 4 folds x 2 repeats
    CHECK(r.confusion[i][3] == 8);
  }
}

TEST_CASE("fold and repeat limits") {
  const auto d = labelled_rows(3, 6);
  LoocvOptions opt;
  opt.repeats = 2;
  opt.max_folds = 4;
  const EvalReport r = run_loocv(stub_method(), d.inputs, d.labels, 3, opt);
  CHECK(r.trials.size() == 8);
  CHECK(r.folds == 4);
  opt.max_folds = 0;
  CHECK_THROWS_AS(run_loocv(stub_method(), d.inputs, d.labels, 3, opt), ConfigError);
  opt.max_folds.reset();
  opt.repeats = 0;
  CHECK_THROWS_AS(run_loocv(stub_method(), d.inputs, d.labels, 3, opt), ConfigError);
}

TEST_CASE("failed trials are flagged and left out of the statistics") {
  const auto d = labelled_rows(3, 4);
  Method m = stub_method();
  m.train = [](std::span<const double> x, std::span<const int>, std::size_t classes, std::uint64_t,
               WorkerPool*) -> std::unique_ptr<Classifier> {
    // Fold 1 holds out sample 1 of each class, so sample 1 is absent from training.
    for (std::size_t i = 1; i < x.size(); i += 2)
      if (x[i] == 1.0)
        return std::make_unique<StubClassifier>(classes, -1);
    throw TrainingError("stage 3 class 2 group 0: diverged");
  };
  LoocvOptions opt;
  opt.repeats = 2;
  const EvalReport r = run_loocv(m, d.inputs, d.labels, 3, opt);
  CHECK(r.trials.size() == 8);
  CHECK(r.failed_trials == 2);
  for (const auto& t : r.trials)
    if (t.fold == 1) {
      CHECK(t.failed);
      CHECK(t.error.find("stage 3") != std::string::npos);
    }
  CHECK(r.mean_accuracy == 1.0);
  std::size_t total = 0;
  for (const auto& row : r.confusion)
    for (auto v : row)
      total += v;
  CHECK(total == 6 * 3);
}

TEST_CASE("real methods: trials reproduce and parallel trials match serial ones") {
  const auto d = toy::sinusoids(2, 3, 96, 41);
  const Method m = make_method(toy::method(MethodKind::fcn, 2));
  LoocvOptions opt;
  opt.repeats = 2;
  opt.seed = 3;
  const EvalReport a = run_loocv(m, d.inputs, d.labels, 2, opt);
  const EvalReport b = run_loocv(m, d.inputs, d.labels, 2, opt);
  WorkerPool pool(3);
  opt.parallel_trials = true;
  const EvalReport c = run_loocv(m, d.inputs, d.labels, 2, opt, &pool);
  REQUIRE(a.trials.size() == 6);
  for (std::size_t i = 0; i < a.trials.size(); ++i) {
    CHECK(a.trials[i].predictions == b.trials[i].predictions);
    CHECK(a.trials[i].predictions == c.trials[i].predictions);
    CHECK_FALSE(a.trials[i].failed);
  }
  CHECK(a.mean_accuracy == c.mean_accuracy);
  CHECK(a.method == "fcn");
  CHECK(a.config_hash == toy::method(MethodKind::fcn, 2).hash());
}

TEST_CASE("robustness sweep over 8 to 17 classes") {
  const auto d = labelled_rows(17, 3);
  std::vector<std::size_t> counts;
  for (std::size_t n = 8; n <= 17; ++n)
    counts.push_back(n);
  LoocvOptions opt;
  opt.repeats = 1;
  const auto reports = robustness_sweep(stub_method(0), d.inputs, d.labels, 17, counts, opt);
  REQUIRE(reports.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(reports[i].classes == counts[i]);
    CHECK(reports[i].mean_accuracy == doctest::Approx(1.0 / double(counts[i])).epsilon(1e-12));
  }
  const auto plain = run_loocv(stub_method(0), d.inputs, d.labels, 17, opt);
  // Identical apart from wall times.
  auto no_time = [](EvalReport r) {
    for (auto& t : r.trials)
      t.seconds = 0.0;
    summarize(r);
    return to_json(r);
  };
  CHECK(no_time(plain) == no_time(reports.back()));
  const std::vector<std::size_t> too_many = {18};
  CHECK_THROWS_AS(robustness_sweep(stub_method(), d.inputs, d.labels, 17, too_many, opt), ConfigError);
}

TEST_CASE("first classes keeps the lowest labels") {
  const auto d = labelled_rows(4, 2);
  const Subset s = first_classes(d.inputs, d.labels, 2);
  CHECK(s.labels == std::vector<int>{0, 0, 1, 1});
  CHECK(s.inputs.size() == 8);
}

TEST_CASE("confusion matrix examples") {
  const auto id = confusion_matrix(std::vector<int>{0, 1}, std::vector<int>{0, 1}, 2);
  CHECK(id == ConfusionMatrix{{1, 0}, {0, 1}});
  const auto off = confusion_matrix(std::vector<int>{0, 0}, std::vector<int>{1, 1}, 2);
  CHECK(off[0][1] == 2);
  CHECK_THROWS_AS(confusion_matrix(std::vector<int>{0}, std::vector<int>{2}, 2), InvalidArgument);
  CHECK_THROWS_AS(confusion_matrix(std::vector<int>{0}, std::vector<int>{}, 2), InvalidArgument);

  Rng rng(3);
  std::uniform_int_distribution<int> label(0, 3);
  std::vector<int> t(100), p(100);
  for (std::size_t i = 0; i < 100; ++i) {
    t[i] = label(rng);
    p[i] = label(rng);
  }
  const auto m = confusion_matrix(t, p, 4);
  for (int c = 0; c < 4; ++c) {
    std::size_t row = 0;
    for (auto v : m[static_cast<std::size_t>(c)])
      row += v;
    CHECK(row == static_cast<std::size_t>(std::count(t.begin(), t.end(), c)));
  }
}

TEST_CASE("statistics helpers") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0}) == 2.5);
  CHECK_THROWS(median({}));
  const std::vector<double> v = {1.0, 2.0, 3.0};
  CHECK(sample_std(v) == doctest::Approx(1.0));
  CHECK(sample_std(std::vector<double>{5.0}) == 0.0);
}

TEST_CASE("worker-count benchmark") {
  const auto d = toy::sinusoids(2, 4, 96, 42);
  const std::vector<std::size_t> workers = {1, 2};
  const auto rows = benchmark_cores(toy::method(MethodKind::cmsn, 2), d.inputs, d.labels, 2, workers, 7, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].speedup == 1.0);
  CHECK(rows[0].model_hash == rows[1].model_hash);
  std::ostringstream os;
  write_bench_csv(os, rows);
  CHECK(os.str().rfind("workers,seconds,speedup,model_hash,oversubscribed\n", 0) == 0);
  const std::vector<std::size_t> zero = {0};
  CHECK_THROWS_AS(benchmark_cores(toy::method(MethodKind::cmsn, 2), d.inputs, d.labels, 2, zero, 7, 1), ConfigError);
}

TEST_CASE("reports round-trip and export") {
  const auto d = labelled_rows(3, 3);
  LoocvOptions opt;
  opt.repeats = 2;
  const auto a = run_loocv(stub_method(), d.inputs, d.labels, 3, opt);
  const auto b = run_loocv(stub_method(1), d.inputs, d.labels, 3, opt);
  CHECK(to_json(report_from_json(to_json(a))) == to_json(a));
  CHECK(to_json(a).at("trial_count") == 6);

  std::vector<EvalReport> both = {a, b};
  std::ostringstream summary;
  write_summary_csv(summary, both);
  CHECK(summary.str() ==
        "method,classes,trials,failed,mean_accuracy,std_accuracy,mean_seconds\n"
        "oracle,3,6,0,1,0," + to_text(a.mean_seconds) + "\n"
        "constant,3,6,0," + to_text(b.mean_accuracy) + ",0," + to_text(b.mean_seconds) + "\n");

  std::ostringstream conf;
  write_confusion_csv(conf, confusion_matrix(std::vector<int>{0, 1}, std::vector<int>{1, 1}, 2));
  CHECK(conf.str() == "true\\predicted,0,1\n0,0,1\n1,0,1\n");

  const auto small = run_loocv(stub_method(), labelled_rows(2, 2).inputs, labelled_rows(2, 2).labels, 2, opt);
  std::vector<EvalReport> sweep = {a, b, small};
  std::ostringstream cmp;
  write_comparison_csv(cmp, sweep);
  CHECK(cmp.str() == "classes,oracle_mean,oracle_std,constant_mean,constant_std\n"
                     "2,1,0,,\n"
                     "3,1,0," + to_text(b.mean_accuracy) + ",0\n");
  CHECK_THROWS_AS(report_from_json(nlohmann::json::object()), DataError);
}
