// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/baselines.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"
#include "cmst/random.hpp"

#include <algorithm>
#include <cmath>

namespace cmst::baselines {

using nlohmann::json;
using nn::LayerSpec;

Split stratified_split(std::span<const int> labels, std::size_t classes, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Split split;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2)
      throw DataError("cannot split class " + std::to_string(c) + ": it has " + std::to_string(idx.size()) +
                      " sample(s), need at least 2");
    Rng rng(derive_seed(seed, {0x5b, c}));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto n_val =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::lround((1.0 - train_fraction) * double(n))), 1, n - 1);
    split.validation.insert(split.validation.end(), idx.begin(), idx.begin() + std::ptrdiff_t(n_val));
    split.train.insert(split.train.end(), idx.begin() + std::ptrdiff_t(n_val), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

int committee_vote(std::span<const int> labels, std::size_t classes) {
  if (labels.empty())
    throw InvalidArgument("committee vote over an empty list");
  std::vector<std::size_t> counts(classes, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw InvalidArgument("vote " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    ++counts[static_cast<std::size_t>(l)];
  }
  // max_element keeps the first maximum, which is the lowest class index.
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

nn::Architecture FcnBaselineConfig::architecture() const {
  nn::Architecture a;
  a.input = {1, input_width};
  a.layers = {LayerSpec::dense(hidden[0]), LayerSpec::relu(), LayerSpec::dense(hidden[1]), LayerSpec::relu(),
              LayerSpec::dense(classes), LayerSpec::softmax()};
  a.shapes();
  return a;
}

namespace {

json patience_json(const std::optional<std::size_t>& p) {
  return p ? json(*p) : json(nullptr);
}

std::optional<std::size_t> patience_from(const json& j, std::optional<std::size_t> d) {
  if (!j.contains("patience"))
    return d;
  if (j.at("patience").is_null())
    return std::nullopt;
  return j.at("patience").get<std::size_t>();
}

} // namespace

json to_json(const CnnBaselineConfig& c) {
  return {{"cnn", cnn::to_json(c.arch)},
          {"max_epochs", c.max_epochs},
          {"adam", optim::to_json(c.adam)},
          {"patience", patience_json(c.patience)},
          {"train_fraction", c.train_fraction}};
}

CnnBaselineConfig cnn_baseline_config_from_json(const json& j, CnnBaselineConfig c) {
  try {
    check_keys(j, {"cnn", "max_epochs", "adam", "patience", "train_fraction"}, "cnn baseline config");
    if (j.contains("cnn"))
      c.arch = cnn::cnn_arch_from_json(j.at("cnn"), c.arch);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    if (j.contains("adam"))
      c.adam = optim::adam_config_from_json(j.at("adam"), c.adam);
    c.patience = patience_from(j, c.patience);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cnn baseline config: ") + e.what());
  }
  return c;
}

json to_json(const FcnBaselineConfig& c) {
  return {{"input_width", c.input_width}, {"hidden", c.hidden},
          {"classes", c.classes},         {"max_epochs", c.max_epochs},
          {"l2", c.l2},                   {"adam", optim::to_json(c.adam)},
          {"patience", patience_json(c.patience)}, {"train_fraction", c.train_fraction}};
}

FcnBaselineConfig fcn_baseline_config_from_json(const json& j, FcnBaselineConfig c) {
  try {
    check_keys(j, {"input_width", "hidden", "classes", "max_epochs", "l2", "adam", "patience", "train_fraction"},
               "fcn baseline config");
    c.input_width = j.value("input_width", c.input_width);
    if (j.contains("hidden"))
      c.hidden = j.at("hidden").get<std::array<std::size_t, 2>>();
    c.classes = j.value("classes", c.classes);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.l2 = j.value("l2", c.l2);
    if (j.contains("adam"))
      c.adam = optim::adam_config_from_json(j.at("adam"), c.adam);
    c.patience = patience_from(j, c.patience);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("fcn baseline config: ") + e.what());
  }
  return c;
}

namespace {

TrainedNetwork train_split(nn::Network net, std::size_t classes, std::size_t max_epochs, double l2,
                           const optim::AdamConfig& adam, std::optional<std::size_t> patience, double train_fraction,
                           std::span<const double> inputs, std::span<const int> labels, std::uint64_t seed) {
  const std::size_t width = net.arch.input.size();
  if (inputs.size() != labels.size() * width)
    throw ShapeError("expected " + std::to_string(labels.size()) + " rows of " + std::to_string(width) + " values");
  if (max_epochs < 1)
    throw ConfigError("max epochs must be >= 1");
  const Split split = stratified_split(labels, classes, train_fraction, derive_seed(seed, {0x57}));
  optim::SampleSet all;
  all.count = labels.size();
  all.inputs.assign(inputs.begin(), inputs.end());
  all.targets = cnn::one_hot(labels, classes);
  const optim::SampleSet train = all.subset(split.train);
  const optim::SampleSet validation = all.subset(split.validation);

  optim::TrainOptions opt;
  opt.optimizer = optim::OptimizerKind::adam;
  opt.adam = adam;
  opt.loss = nn::LossKind::cross_entropy;
  opt.stop.max_epochs = max_epochs;
  opt.stop.validation_patience = patience;
  opt.l2 = l2;
  opt.seed = derive_seed(seed, {0x7a});
  opt.validation = &validation;
  auto r = optim::train(std::move(net), train, opt);
  return TrainedNetwork{std::move(r.network), std::move(r.history), r.selected_epoch, seed};
}

} // namespace

TrainedNetwork train_cnn_baseline(const CnnBaselineConfig& c, std::span<const double> inputs,
                                  std::span<const int> labels, std::uint64_t seed) {
  return train_split(cnn::build_cnn(c.arch, seed), c.arch.classes, c.max_epochs, 0.0, c.adam, c.patience,
                     c.train_fraction, inputs, labels, seed);
}

TrainedNetwork train_fcn_baseline(const FcnBaselineConfig& c, std::span<const double> inputs,
                                  std::span<const int> labels, std::uint64_t seed) {
  return train_split(nn::init_network(c.architecture(), seed, nn::Init::fan_in_uniform), c.classes, c.max_epochs,
                     c.l2, c.adam, c.patience, c.train_fraction, inputs, labels, seed);
}

namespace {

template <class Train>
Committee train_committee(std::size_t members, std::uint64_t seed, WorkerPool* pool, const Train& train_one) {
  if (members < 1)
    throw ConfigError("a committee needs at least 1 member");
  Committee c;
  c.members.resize(members);
  parallel_for(pool, members, [&](std::size_t m) {
    try {
      c.members[m] = train_one(derive_seed(seed, {0xc3, m}));
    } catch (const Error& e) {
      throw TrainingError("committee member " + std::to_string(m) + " failed: " + e.what());
    }
  });
  return c;
}

} // namespace

Committee train_cnn_committee(const CnnBaselineConfig& config, std::size_t members, std::span<const double> inputs,
                              std::span<const int> labels, std::uint64_t seed, WorkerPool* pool) {
  return train_committee(members, seed, pool,
                         [&](std::uint64_t s) { return train_cnn_baseline(config, inputs, labels, s); });
}

Committee train_fcn_committee(const FcnBaselineConfig& config, std::size_t members, std::span<const double> inputs,
                              std::span<const int> labels, std::uint64_t seed, WorkerPool* pool) {
  return train_committee(members, seed, pool,
                         [&](std::uint64_t s) { return train_fcn_baseline(config, inputs, labels, s); });
}

namespace {

int row_argmax(const double* p, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (p[j] > p[best])
      best = j;
  return static_cast<int>(best);
}

} // namespace

std::vector<int> classify(const nn::Network& net, std::span<const double> inputs, std::size_t count) {
  const auto probs = optim::predict_all(net, inputs, count);
  const std::size_t c = count ? probs.size() / count : 0;
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = row_argmax(probs.data() + i * c, c);
  return out;
}

std::vector<int> classify(const Committee& committee, std::span<const double> inputs, std::size_t count,
                          WorkerPool* pool) {
  const std::size_t m = committee.members.size();
  if (m == 0)
    throw InvalidArgument("empty committee");
  std::vector<std::vector<double>> probs(m);
  parallel_for(pool, m, [&](std::size_t k) { probs[k] = optim::predict_all(committee.members[k].network, inputs, count); });
  const std::size_t c = count ? probs[0].size() / count : 0;
  std::vector<int> out(count);
  std::vector<int> votes(m);
  std::vector<double> mean(c);
  for (std::size_t i = 0; i < count; ++i) {
    if (committee.rule == VoteRule::label) {
      for (std::size_t k = 0; k < m; ++k)
        votes[k] = row_argmax(probs[k].data() + i * c, c);
      out[i] = committee_vote(votes, c);
    } else {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < c; ++j)
          mean[j] += probs[k][i * c + j] / double(m);
      out[i] = row_argmax(mean.data(), c);
    }
  }
  return out;
}

} // namespace cmst::baselines
