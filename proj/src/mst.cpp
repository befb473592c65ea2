// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/mst.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"
#include "cmst/random.hpp"
#include "cmst/serialize.hpp"
#include "cmst/text.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace cmst::mst {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::LayerSpec;

void CmsnConfig::validate() const {
  if (stages < 2)
    throw ConfigError("cmsn: need at least 2 stages (the CNN bank and one FCN stage)");
  if (groups < 1)
    throw ConfigError("cmsn: groups per class must be >= 1");
  if (bank.members < 1)
    throw ConfigError("cmsn: the CNN bank needs at least 1 member");
  if (classes() < 2)
    throw ConfigError("cmsn: need at least 2 classes");
  if (fcn_epochs < 1 || bank.epochs < 1)
    throw ConfigError("cmsn: epochs must be >= 1");
  if (hidden[0] < 1 || hidden[1] < 1)
    throw ConfigError("cmsn: hidden widths must be >= 1");
  if (schedule.size() != stages - 1)
    throw ConfigError("cmsn: target-error schedule has " + std::to_string(schedule.size()) + " entries for " +
                      std::to_string(stages - 1) + " FCN stages");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] >= 0.0) || !std::isfinite(schedule[i]))
      throw ConfigError("cmsn: target error of stage " + std::to_string(i + 2) + " must be >= 0");
    if (i > 0 && !(schedule[i] < schedule[i - 1]))
      throw ConfigError("cmsn: target-error schedule must strictly decrease (stage " + std::to_string(i + 2) +
                        ": " + to_text(schedule[i]) + " >= " + to_text(schedule[i - 1]) + ")");
  }
  bank.arch.architecture();
}

std::vector<StageSpec> CmsnConfig::stage_specs() const {
  std::vector<StageSpec> out;
  for (std::size_t s = 2; s <= stages; ++s)
    out.push_back(StageSpec{s, groups, hidden, fcn_epochs, schedule[s - 2]});
  return out;
}

json to_json(const CmsnConfig& c) {
  return {{"cnn", cnn::to_json(c.bank.arch)},
          {"members", c.bank.members},
          {"cnn_epochs", c.bank.epochs},
          {"adam", optim::to_json(c.bank.adam)},
          {"groups", c.groups},
          {"stages", c.stages},
          {"schedule", c.schedule},
          {"hidden", c.hidden},
          {"fcn_epochs", c.fcn_epochs},
          {"lm", optim::to_json(c.lm)},
          {"seed", c.seed}};
}

CmsnConfig cmsn_config_from_json(const json& j, CmsnConfig c) {
  try {
    check_keys(j, {"cnn", "members", "cnn_epochs", "adam", "groups", "stages", "schedule", "hidden", "fcn_epochs", "lm",
                   "seed"},
               "cmsn config");
    if (j.contains("cnn"))
      c.bank.arch = cnn::cnn_arch_from_json(j.at("cnn"), c.bank.arch);
    c.bank.members = j.value("members", c.bank.members);
    c.bank.epochs = j.value("cnn_epochs", c.bank.epochs);
    if (j.contains("adam"))
      c.bank.adam = optim::adam_config_from_json(j.at("adam"), c.bank.adam);
    c.groups = j.value("groups", c.groups);
    c.stages = j.value("stages", c.stages);
    if (j.contains("schedule"))
      c.schedule = j.at("schedule").get<std::vector<double>>();
    if (j.contains("hidden"))
      c.hidden = j.at("hidden").get<std::array<std::size_t, 2>>();
    c.fcn_epochs = j.value("fcn_epochs", c.fcn_epochs);
    if (j.contains("lm"))
      c.lm = optim::lm_config_from_json(j.at("lm"), c.lm);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cmsn config: ") + e.what());
  }
  return c;
}

std::size_t Layout::stage_input_width(std::size_t stage) const {
  if (stage < 2)
    throw InvalidArgument("stage 1 reads fingerprints, not a stage input");
  return stage == 2 ? members * classes : classes * groups;
}

std::vector<double> build_stage_targets(std::span<const int> labels, int cls) {
  std::vector<double> t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    t[i] = labels[i] == cls ? 1.0 : 0.0;
  return t;
}

nn::Architecture fcn_architecture(std::size_t input_width, const std::array<std::size_t, 2>& hidden) {
  nn::Architecture a;
  a.input = {1, input_width};
  a.layers = {LayerSpec::dense(hidden[0]), LayerSpec::tanh(), LayerSpec::dense(hidden[1]), LayerSpec::tanh(),
              LayerSpec::dense(1)};
  return a;
}

double Stage::mean_train_error() const {
  if (history.empty())
    return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& h : history)
    sum += h.empty() ? std::numeric_limits<double>::quiet_NaN() : h.back().train_error;
  return sum / static_cast<double>(history.size());
}

Stage train_stage(const StageSpec& spec, std::size_t classes, std::span<const double> inputs, std::size_t count,
                  std::span<const int> labels, std::span<const std::uint64_t> seeds, const optim::LmConfig& lm,
                  WorkerPool* pool) {
  if (count == 0 || labels.size() != count)
    throw DataError("stage " + std::to_string(spec.index) + ": need one label per input row");
  if (inputs.size() % count != 0)
    throw ShapeError("stage " + std::to_string(spec.index) + ": ragged input matrix");
  const std::size_t n = classes * spec.groups;
  if (seeds.size() != n)
    throw InvalidArgument("stage " + std::to_string(spec.index) + ": need " + std::to_string(n) + " seeds, got " +
                          std::to_string(seeds.size()));
  Stage stage;
  stage.spec = spec;
  stage.classes = classes;
  stage.input_width = inputs.size() / count;
  stage.seeds.assign(seeds.begin(), seeds.end());
  stage.fcns.resize(n);
  stage.history.resize(n);

  // One shared sample set per class; FCNs of a class differ only by seed.
  std::vector<optim::SampleSet> sets(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    sets[c].count = count;
    sets[c].inputs.assign(inputs.begin(), inputs.end());
    sets[c].targets = build_stage_targets(labels, static_cast<int>(c));
  }
  optim::TrainOptions opt;
  opt.optimizer = optim::OptimizerKind::lm;
  opt.loss = nn::LossKind::mse;
  opt.lm = lm;
  opt.stop.max_epochs = spec.epochs;
  opt.stop.target_error = spec.target_error;
  const auto arch = fcn_architecture(stage.input_width, spec.hidden);

  parallel_for(pool, n, [&](std::size_t i) {
    const std::size_t c = i / spec.groups;
    try {
      auto r = optim::train(nn::init_network(arch, seeds[i], nn::Init::fan_in_uniform), sets[c], opt);
      stage.fcns[i] = std::move(r.network);
      stage.history[i] = std::move(r.history);
    } catch (const Error& e) {
      throw TrainingError("stage " + std::to_string(spec.index) + " fcn (class " + std::to_string(c) + ", group " +
                          std::to_string(i % spec.groups) + ") failed: " + e.what());
    }
  });
  return stage;
}

std::vector<double> stage_forward(const Stage& stage, std::span<const double> inputs, std::size_t count,
                                  WorkerPool* pool) {
  if (inputs.size() != count * stage.input_width)
    throw ShapeError("stage " + std::to_string(stage.spec.index) + " expects rows of " +
                     std::to_string(stage.input_width) + " values");
  const std::size_t n = stage.fcns.size();
  std::vector<double> out(count * n);
  parallel_for(pool, n, [&](std::size_t j) {
    const auto y = optim::predict_all(stage.fcns[j], inputs, count, count);
    for (std::size_t i = 0; i < count; ++i)
      out[i * n + j] = y[i];
  });
  return out;
}

int argmax(std::span<const double> values) {
  if (values.empty())
    throw InvalidArgument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best])
      best = i;
  return static_cast<int>(best);
}

ClassScores average_groups(std::span<const double> outputs, std::size_t classes, std::size_t groups) {
  if (outputs.size() != classes * groups)
    throw ShapeError("final stage has " + std::to_string(outputs.size()) + " outputs, expected " +
                     std::to_string(classes * groups));
  ClassScores s;
  s.scores.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    double sum = 0.0;
    for (std::size_t g = 0; g < groups; ++g)
      sum += outputs[c * groups + g];
    s.scores[c] = sum / static_cast<double>(groups);
  }
  s.label = argmax(s.scores);
  return s;
}

Layout CmsnModel::layout() const {
  return Layout{config.bank.members, config.classes(), config.groups};
}

std::uint64_t fcn_seed(std::uint64_t seed, std::size_t stage, std::size_t cls, std::size_t group) {
  return derive_seed(seed, {0xf0, stage, cls, group});
}

std::vector<std::uint64_t> member_seeds(const CmsnConfig& config) {
  return cnn::bank_seeds(derive_seed(config.seed, {0xb1}), config.bank.members);
}

namespace {

std::vector<std::uint64_t> stage_seeds(const CmsnConfig& config, std::size_t stage) {
  std::vector<std::uint64_t> out;
  for (std::size_t c = 0; c < config.classes(); ++c)
    for (std::size_t g = 0; g < config.groups; ++g)
      out.push_back(fcn_seed(config.seed, stage, c, g));
  return out;
}

} // namespace

CmsnModel build_cmsn(const CmsnConfig& config) {
  config.validate();
  CmsnModel m;
  m.config = config;
  m.bank.arch = config.bank.arch;
  m.bank.seeds = member_seeds(config);
  for (auto s : m.bank.seeds)
    m.bank.members.push_back(cnn::build_cnn(config.bank.arch, s));
  m.bank.history.resize(m.bank.members.size());
  const Layout layout = m.layout();
  for (const auto& spec : config.stage_specs()) {
    Stage st;
    st.spec = spec;
    st.classes = config.classes();
    st.input_width = layout.stage_input_width(spec.index);
    st.seeds = stage_seeds(config, spec.index);
    const auto arch = fcn_architecture(st.input_width, spec.hidden);
    for (auto s : st.seeds)
      st.fcns.push_back(nn::init_network(arch, s, nn::Init::fan_in_uniform));
    st.history.resize(st.fcns.size());
    m.stages.push_back(std::move(st));
  }
  return m;
}

CmsnModel train_cmsn(const CmsnConfig& config, std::span<const double> inputs, std::span<const int> labels,
                     WorkerPool* pool) {
  config.validate();
  const std::size_t count = labels.size();
  std::vector<std::size_t> per_class(config.classes(), 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= config.classes())
      throw DataError("cmsn: label " + std::to_string(l) + " outside [0, " + std::to_string(config.classes()) + ")");
    ++per_class[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] < 2)
      throw DataError("cmsn: class " + std::to_string(c) + " has " + std::to_string(per_class[c]) +
                      " training samples, need at least 2");

  CmsnModel m;
  m.config = config;
  try {
    m.bank = cnn::train_bank(config.bank, inputs, labels, member_seeds(config), pool);
  } catch (const Error& e) {
    throw TrainingError(std::string("stage 1: ") + e.what());
  }
  std::vector<double> x = cnn::extract_features(m.bank, inputs, count, pool);
  for (const auto& spec : config.stage_specs()) {
    const auto seeds = stage_seeds(config, spec.index);
    try {
      m.stages.push_back(train_stage(spec, config.classes(), x, count, labels, seeds, config.lm, pool));
    } catch (const TrainingError&) {
      throw;
    } catch (const Error& e) {
      throw TrainingError("stage " + std::to_string(spec.index) + ": " + e.what());
    }
    if (spec.index < config.stages)
      x = stage_forward(m.stages.back(), x, count, pool);
  }
  return m;
}

std::vector<double> final_outputs(const CmsnModel& model, std::span<const double> inputs, std::size_t count,
                                  WorkerPool* pool) {
  std::vector<double> x = cnn::extract_features(model.bank, inputs, count, pool);
  for (const auto& st : model.stages)
    x = stage_forward(st, x, count, pool);
  return x;
}

std::vector<ClassScores> predict_batch(const CmsnModel& model, std::span<const double> inputs, std::size_t count,
                                       WorkerPool* pool) {
  const auto out = final_outputs(model, inputs, count, pool);
  const std::size_t width = model.config.classes() * model.config.groups;
  std::vector<ClassScores> scores;
  for (std::size_t i = 0; i < count; ++i)
    scores.push_back(average_groups(std::span<const double>(out).subspan(i * width, width), model.config.classes(),
                                    model.config.groups));
  return scores;
}

ClassScores predict(const CmsnModel& model, std::span<const double> fingerprint) {
  const std::size_t width = model.bank.arch.channels * model.bank.arch.input_length;
  if (fingerprint.size() != width)
    throw ShapeError("fingerprint has " + std::to_string(fingerprint.size()) + " values, model expects " +
                     std::to_string(width));
  return predict_batch(model, fingerprint, 1).front();
}

void write_model_history_csv(std::ostream& os, const CmsnModel& model) {
  os << "stage,network,epoch,train_error,validation_error,step_parameter\n";
  auto rows = [&](std::size_t stage, const std::vector<std::vector<optim::EpochRecord>>& hist) {
    for (std::size_t n = 0; n < hist.size(); ++n)
      for (const auto& r : hist[n]) {
        os << stage << ',' << n << ',' << r.epoch << ',' << to_text(r.train_error) << ',';
        if (std::isfinite(r.validation_error))
          os << to_text(r.validation_error);
        os << ',' << to_text(r.step_parameter) << '\n';
      }
  };
  rows(1, model.bank.history);
  for (const auto& st : model.stages)
    rows(st.spec.index, st.history);
}

namespace {

std::string fcn_file(std::size_t c, std::size_t g) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "fcn_c%02zu_g%zu.bin", c, g);
  return buf;
}

json stage_history_json(const std::vector<std::vector<optim::EpochRecord>>& hist) {
  json out = json::array();
  for (const auto& h : hist) {
    json one = json::array();
    for (const auto& r : h)
      one.push_back({r.epoch, r.train_error, r.step_parameter});
    out.push_back(one);
  }
  return out;
}

} // namespace

void save_model(const CmsnModel& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  cnn::save_bank(model.bank, dir / "cnn");
  json stages = json::array();
  for (const auto& st : model.stages) {
    const std::string sub = "stage_" + std::to_string(st.spec.index);
    fs::create_directories(dir / sub, ec);
    if (ec)
      throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
    json files = json::array();
    for (std::size_t i = 0; i < st.fcns.size(); ++i) {
      const std::size_t c = i / st.spec.groups, g = i % st.spec.groups;
      const std::string name = sub + "/" + fcn_file(c, g);
      save_network(dir / name, st.fcns[i], {{"stage", st.spec.index}, {"class", c}, {"group", g}});
      files.push_back({{"file", name}, {"class", c}, {"group", g}, {"seed", st.seeds[i]}});
    }
    stages.push_back({{"index", st.spec.index},
                      {"target_error", st.spec.target_error},
                      {"groups", st.spec.groups},
                      {"input_width", st.input_width},
                      {"networks", files},
                      {"history", stage_history_json(st.history)}});
  }
  const json manifest = {{"format", "cmst-model"},
                         {"version", 1},
                         {"method", "cmsn"},
                         {"config", to_json(model.config)},
                         {"classes", model.config.classes()},
                         {"bank", "cnn"},
                         {"stages", stages}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::ostringstream hist;
  write_model_history_csv(hist, model);
  write_text_file(dir / "history.csv", hist.str());
}

CmsnModel load_model(const fs::path& dir) {
  const json m = read_json_file(dir / "manifest.json");
  CmsnModel model;
  try {
    if (m.value("format", "") != "cmst-model" || m.value("method", "") != "cmsn")
      throw DataError((dir / "manifest.json").string() + ": not a C-MSN model manifest");
    if (m.value("version", 0) != 1)
      throw DataError((dir / "manifest.json").string() + ": unsupported model version");
    model.config = cmsn_config_from_json(m.at("config"));
    model.config.validate();
    model.bank = cnn::load_bank(dir / m.value("bank", std::string("cnn")));
    if (model.bank.members.size() != model.config.bank.members)
      throw DataError(dir.string() + ": bank size differs from the config");
    const auto specs = model.config.stage_specs();
    const auto& stages = m.at("stages");
    if (stages.size() != specs.size())
      throw DataError(dir.string() + ": stage count differs from the config");
    const Layout layout = model.layout();
    for (std::size_t s = 0; s < specs.size(); ++s) {
      Stage st;
      st.spec = specs[s];
      st.classes = model.config.classes();
      st.input_width = layout.stage_input_width(st.spec.index);
      const auto arch = fcn_architecture(st.input_width, st.spec.hidden);
      const auto& nets = stages[s].at("networks");
      if (nets.size() != layout.networks_per_stage())
        throw DataError(dir.string() + ": stage " + std::to_string(st.spec.index) + " has the wrong network count");
      for (const auto& e : nets) {
        auto net = load_network(dir / e.at("file").get<std::string>());
        if (!(net.arch == arch))
          throw DataError(dir.string() + ": stage " + std::to_string(st.spec.index) + " network shape mismatch");
        st.fcns.push_back(std::move(net));
        st.seeds.push_back(e.at("seed").get<std::uint64_t>());
      }
      for (const auto& h : stages[s].value("history", json::array())) {
        std::vector<optim::EpochRecord> one;
        for (const auto& r : h) {
          optim::EpochRecord rec;
          rec.epoch = r.at(0).get<std::size_t>();
          rec.train_error = r.at(1).get<double>();
          rec.validation_error = std::numeric_limits<double>::quiet_NaN();
          rec.step_parameter = r.at(2).get<double>();
          one.push_back(rec);
        }
        st.history.push_back(std::move(one));
      }
      model.stages.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return model;
}

} // namespace cmst::mst
