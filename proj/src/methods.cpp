// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/methods.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"
#include "cmst/serialize.hpp"
#include "cmst/text.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace cmst {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(MethodKind kind) {
  switch (kind) {
  case MethodKind::cmsn: return "cmsn";
  case MethodKind::cnn: return "cnn";
  case MethodKind::cnn_committee: return "cnn-committee";
  case MethodKind::fcn: return "fcn";
  case MethodKind::fcn_committee: return "fcn-committee";
  }
  return "unknown";
}

MethodKind method_kind_from_string(const std::string& name) {
  for (auto k : {MethodKind::cmsn, MethodKind::cnn, MethodKind::cnn_committee, MethodKind::fcn,
                 MethodKind::fcn_committee})
    if (to_string(k) == name)
      return k;
  throw ConfigError("unknown method '" + name + "' (expected cmsn, cnn, cnn-committee, fcn or fcn-committee)");
}

namespace {

bool is_committee(MethodKind k) { return k == MethodKind::cnn_committee || k == MethodKind::fcn_committee; }

std::string vote_name(baselines::VoteRule r) {
  return r == baselines::VoteRule::label ? "label" : "score-average";
}

baselines::VoteRule vote_from(const std::string& s) {
  if (s == "label")
    return baselines::VoteRule::label;
  if (s == "score-average")
    return baselines::VoteRule::score_average;
  throw ConfigError("unknown vote rule '" + s + "' (expected label or score-average)");
}

} // namespace

MethodConfig MethodConfig::adapted(std::size_t classes, std::size_t input_width) const {
  MethodConfig c = *this;
  auto length = [&](const cnn::CnnArch& a) {
    if (a.channels == 0 || input_width % a.channels != 0)
      throw ConfigError("input width " + std::to_string(input_width) + " is not a multiple of the channel count");
    return input_width / a.channels;
  };
  c.cmsn.bank.arch.classes = classes;
  c.cmsn.bank.arch.input_length = length(c.cmsn.bank.arch);
  c.cnn.arch.classes = classes;
  c.cnn.arch.input_length = length(c.cnn.arch);
  c.fcn.classes = classes;
  c.fcn.input_width = input_width;
  return c;
}

void MethodConfig::validate() const {
  switch (kind) {
  case MethodKind::cmsn:
    cmsn.validate();
    cmsn.bank.arch.architecture();
    break;
  case MethodKind::cnn:
  case MethodKind::cnn_committee:
    cnn.arch.architecture();
    if (cnn.max_epochs < 1)
      throw ConfigError("cnn max_epochs must be >= 1");
    break;
  case MethodKind::fcn:
  case MethodKind::fcn_committee:
    fcn.architecture();
    if (fcn.max_epochs < 1)
      throw ConfigError("fcn max_epochs must be >= 1");
    if (fcn.l2 < 0.0)
      throw ConfigError("fcn l2 must be >= 0");
    break;
  }
  if (is_committee(kind) && members < 1)
    throw ConfigError("a committee needs at least 1 member");
}

json MethodConfig::active_json() const {
  json j = {{"method", to_string(kind)}};
  switch (kind) {
  case MethodKind::cmsn: j["cmsn"] = mst::to_json(cmsn); break;
  case MethodKind::cnn: j["cnn"] = baselines::to_json(cnn); break;
  case MethodKind::fcn: j["fcn"] = baselines::to_json(fcn); break;
  case MethodKind::cnn_committee:
    j["cnn"] = baselines::to_json(cnn);
    j["members"] = members;
    j["vote"] = vote_name(vote);
    break;
  case MethodKind::fcn_committee:
    j["fcn"] = baselines::to_json(fcn);
    j["members"] = members;
    j["vote"] = vote_name(vote);
    break;
  }
  return j;
}

std::string MethodConfig::hash() const { return hex64(fnv1a(active_json().dump())); }

json to_json(const MethodConfig& c) {
  return {{"method", to_string(c.kind)},    {"cmsn", mst::to_json(c.cmsn)}, {"cnn", baselines::to_json(c.cnn)},
          {"fcn", baselines::to_json(c.fcn)}, {"members", c.members},       {"vote", vote_name(c.vote)}};
}

MethodConfig method_config_from_json(const json& j, MethodConfig c) {
  if (!j.is_object())
    throw ConfigError("method config must be a JSON object");
  try {
    check_keys(j, {"method", "cmsn", "cnn", "fcn", "members", "vote"}, "method config");
    if (j.contains("method"))
      c.kind = method_kind_from_string(j.at("method").get<std::string>());
    if (j.contains("cmsn"))
      c.cmsn = mst::cmsn_config_from_json(j.at("cmsn"), c.cmsn);
    if (j.contains("cnn"))
      c.cnn = baselines::cnn_baseline_config_from_json(j.at("cnn"), c.cnn);
    if (j.contains("fcn"))
      c.fcn = baselines::fcn_baseline_config_from_json(j.at("fcn"), c.fcn);
    c.members = j.value("members", c.members);
    if (j.contains("vote"))
      c.vote = vote_from(j.at("vote").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("method config: ") + e.what());
  }
  return c;
}

namespace {

void check_rows(std::span<const double> inputs, std::size_t count, std::size_t width) {
  if (inputs.size() != count * width)
    throw ShapeError("expected " + std::to_string(count) + " rows of " + std::to_string(width) + " values, got " +
                     std::to_string(inputs.size()) + " values");
}

std::uint64_t hash_network(const nn::Network& net, std::uint64_t h) {
  std::ostringstream os;
  write_network(os, net);
  return fnv1a(os.str(), h);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_member_history(std::ostream& os, const std::vector<baselines::TrainedNetwork>& members) {
  os << "member,epoch,train_error,validation_error,step_parameter\n";
  for (std::size_t m = 0; m < members.size(); ++m)
    for (const auto& r : members[m].history) {
      os << m << ',' << r.epoch << ',' << to_text(r.train_error) << ',';
      if (std::isfinite(r.validation_error))
        os << to_text(r.validation_error);
      os << ',' << to_text(r.step_parameter) << '\n';
    }
}

json history_json(const std::vector<optim::EpochRecord>& hist) {
  json out = json::array();
  for (const auto& r : hist)
    out.push_back({r.epoch, r.train_error, std::isfinite(r.validation_error) ? json(r.validation_error) : json(nullptr),
                   r.step_parameter});
  return out;
}

std::vector<optim::EpochRecord> history_from_json(const json& j) {
  std::vector<optim::EpochRecord> out;
  for (const auto& e : j) {
    optim::EpochRecord r;
    r.epoch = e.at(0).get<std::size_t>();
    r.train_error = e.at(1).get<double>();
    r.validation_error = e.at(2).is_null() ? std::nan("") : e.at(2).get<double>();
    r.step_parameter = e.at(3).get<double>();
    out.push_back(r);
  }
  return out;
}

std::string member_file(std::size_t m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%02zu.bin", m);
  return buf;
}

// Baselines store their networks next to a manifest in the model format.
void save_networks(const fs::path& dir, MethodKind kind, const std::vector<baselines::TrainedNetwork>& members,
                   baselines::VoteRule vote, bool single) {
  make_dir(dir);
  json files = json::array();
  for (std::size_t m = 0; m < members.size(); ++m) {
    const std::string name = single ? "network.bin" : member_file(m);
    save_network(dir / name, members[m].network, {{"member", m}, {"seed", members[m].seed}});
    files.push_back({{"file", name},
                     {"seed", members[m].seed},
                     {"selected_epoch", members[m].selected_epoch},
                     {"history", history_json(members[m].history)}});
  }
  json manifest = {{"format", "cmst-model"},
                   {"version", 1},
                   {"method", to_string(kind)},
                   {"classes", members.front().network.arch.output().size()},
                   {"networks", files}};
  if (!single)
    manifest["vote"] = vote_name(vote);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  std::ostringstream hist;
  write_member_history(hist, members);
  write_text_file(dir / "history.csv", hist.str());
}

class CmsnClassifier final : public Classifier {
public:
  explicit CmsnClassifier(mst::CmsnModel m) : model_(std::move(m)) {}
  MethodKind kind() const override { return MethodKind::cmsn; }
  std::size_t classes() const override { return model_.config.classes(); }
  std::size_t input_width() const override { return model_.bank.arch.architecture().input.size(); }
  std::vector<int> classify(std::span<const double> inputs, std::size_t count, WorkerPool* pool) const override {
    check_rows(inputs, count, input_width());
    const auto scores = mst::predict_batch(model_, inputs, count, pool);
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i)
      out[i] = scores[i].label;
    return out;
  }
  void save(const fs::path& dir) const override { mst::save_model(model_, dir); }
  std::string model_hash() const override {
    std::uint64_t h = fnv1a("cmsn");
    for (const auto& net : model_.bank.members)
      h = hash_network(net, h);
    for (const auto& st : model_.stages)
      for (const auto& net : st.fcns)
        h = hash_network(net, h);
    return hex64(h);
  }

private:
  mst::CmsnModel model_;
};

class NetworkClassifier final : public Classifier {
public:
  NetworkClassifier(MethodKind kind, baselines::TrainedNetwork n) : kind_(kind), net_(std::move(n)) {}
  MethodKind kind() const override { return kind_; }
  std::size_t classes() const override { return net_.network.arch.output().size(); }
  std::size_t input_width() const override { return net_.network.arch.input.size(); }
  std::vector<int> classify(std::span<const double> inputs, std::size_t count, WorkerPool*) const override {
    check_rows(inputs, count, input_width());
    return baselines::classify(net_.network, inputs, count);
  }
  void save(const fs::path& dir) const override { save_networks(dir, kind_, {net_}, baselines::VoteRule::label, true); }
  std::string model_hash() const override { return hex64(hash_network(net_.network, fnv1a(to_string(kind_)))); }

private:
  MethodKind kind_;
  baselines::TrainedNetwork net_;
};

class CommitteeClassifier final : public Classifier {
public:
  CommitteeClassifier(MethodKind kind, baselines::Committee c) : kind_(kind), committee_(std::move(c)) {
    if (committee_.members.empty())
      throw InvalidArgument("empty committee");
  }
  MethodKind kind() const override { return kind_; }
  std::size_t classes() const override { return committee_.members.front().network.arch.output().size(); }
  std::size_t input_width() const override { return committee_.members.front().network.arch.input.size(); }
  std::vector<int> classify(std::span<const double> inputs, std::size_t count, WorkerPool* pool) const override {
    check_rows(inputs, count, input_width());
    return baselines::classify(committee_, inputs, count, pool);
  }
  void save(const fs::path& dir) const override {
    save_networks(dir, kind_, committee_.members, committee_.rule, false);
  }
  std::string model_hash() const override {
    std::uint64_t h = fnv1a(to_string(kind_));
    for (const auto& m : committee_.members)
      h = hash_network(m.network, h);
    return hex64(h);
  }

private:
  MethodKind kind_;
  baselines::Committee committee_;
};

} // namespace

std::unique_ptr<Classifier> make_classifier(mst::CmsnModel model) {
  return std::make_unique<CmsnClassifier>(std::move(model));
}

std::unique_ptr<Classifier> make_classifier(MethodKind kind, baselines::TrainedNetwork network) {
  if (kind != MethodKind::cnn && kind != MethodKind::fcn)
    throw InvalidArgument(to_string(kind) + " is not a single-network method");
  return std::make_unique<NetworkClassifier>(kind, std::move(network));
}

std::unique_ptr<Classifier> make_classifier(MethodKind kind, baselines::Committee committee) {
  if (!is_committee(kind))
    throw InvalidArgument(to_string(kind) + " is not a committee method");
  return std::make_unique<CommitteeClassifier>(kind, std::move(committee));
}

std::unique_ptr<Classifier> train_classifier(const MethodConfig& config, std::span<const double> inputs,
                                             std::span<const int> labels, std::uint64_t seed, WorkerPool* pool) {
  config.validate();
  switch (config.kind) {
  case MethodKind::cmsn: {
    auto c = config.cmsn;
    c.seed = seed;
    return make_classifier(mst::train_cmsn(c, inputs, labels, pool));
  }
  case MethodKind::cnn:
    return make_classifier(config.kind, baselines::train_cnn_baseline(config.cnn, inputs, labels, seed));
  case MethodKind::fcn:
    return make_classifier(config.kind, baselines::train_fcn_baseline(config.fcn, inputs, labels, seed));
  case MethodKind::cnn_committee: {
    auto c = baselines::train_cnn_committee(config.cnn, config.members, inputs, labels, seed, pool);
    c.rule = config.vote;
    return make_classifier(config.kind, std::move(c));
  }
  case MethodKind::fcn_committee: {
    auto c = baselines::train_fcn_committee(config.fcn, config.members, inputs, labels, seed, pool);
    c.rule = config.vote;
    return make_classifier(config.kind, std::move(c));
  }
  }
  throw InvalidArgument("unknown method kind");
}

std::unique_ptr<Classifier> load_classifier(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  const json m = read_json_file(file);
  if (!m.is_object() || m.value("format", "") != "cmst-model")
    throw DataError(file.string() + ": not a model manifest");
  MethodKind kind;
  try {
    kind = method_kind_from_string(m.value("method", ""));
  } catch (const ConfigError& e) {
    throw DataError(file.string() + ": " + e.what());
  }
  if (kind == MethodKind::cmsn)
    return make_classifier(mst::load_model(dir));
  if (m.value("version", 0) != 1)
    throw DataError(file.string() + ": unsupported model version");
  try {
    std::vector<baselines::TrainedNetwork> members;
    for (const auto& f : m.at("networks")) {
      baselines::TrainedNetwork t;
      t.network = load_network(dir / f.at("file").get<std::string>());
      t.seed = f.at("seed").get<std::uint64_t>();
      t.selected_epoch = f.value("selected_epoch", std::size_t{0});
      t.history = history_from_json(f.value("history", json::array()));
      members.push_back(std::move(t));
    }
    if (members.empty())
      throw DataError(file.string() + ": no networks listed");
    for (const auto& t : members)
      if (!(t.network.arch == members.front().network.arch))
        throw DataError(file.string() + ": committee members differ in architecture");
    if (!is_committee(kind)) {
      if (members.size() != 1)
        throw DataError(file.string() + ": a single-network model lists " + std::to_string(members.size()));
      return make_classifier(kind, std::move(members.front()));
    }
    baselines::Committee c;
    c.members = std::move(members);
    try {
      c.rule = vote_from(m.value("vote", std::string("label")));
    } catch (const ConfigError& e) {
      throw DataError(file.string() + ": " + e.what());
    }
    return make_classifier(kind, std::move(c));
  } catch (const json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

} // namespace cmst
