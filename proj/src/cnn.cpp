// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/cnn.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"
#include "cmst/random.hpp"
#include "cmst/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

namespace cmst::cnn {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::LayerSpec;

nn::Architecture CnnArch::architecture() const {
  if (classes < 1)
    throw ShapeError("cnn: class count must be >= 1");
  if (input_length < 1 || channels < 1)
    throw ShapeError("cnn: empty input");
  nn::Architecture a;
  a.input = {channels, input_length};
  std::size_t length = input_length;
  for (std::size_t b = 0; b < filters.size(); ++b) {
    const std::size_t stride = b == 0 ? first_stride : 1;
    if (filters[b] < 1 || kernel < 1 || stride < 1 || pool < 1)
      throw ShapeError("cnn inner block " + std::to_string(b) + ": filters, kernel, stride and pool must be >= 1");
    if (length < kernel)
      throw ShapeError("cnn inner block " + std::to_string(b) + ": input length " + std::to_string(length) +
                       " is shorter than kernel " + std::to_string(kernel));
    length = (length - kernel) / stride + 1;
    if (length / pool < 1)
      throw ShapeError("cnn inner block " + std::to_string(b) + ": pooling width " + std::to_string(pool) +
                       " reduces length " + std::to_string(length) + " below 1");
    length /= pool;
    a.layers.push_back(LayerSpec::conv1d(filters[b], kernel, stride));
    a.layers.push_back(LayerSpec::batchnorm());
    a.layers.push_back(LayerSpec::relu());
    a.layers.push_back(LayerSpec::maxpool1d(pool));
  }
  a.layers.push_back(LayerSpec::dropout_layer(dropout));
  a.layers.push_back(LayerSpec::dense(dense_units));
  a.layers.push_back(LayerSpec::dense(classes));
  a.layers.push_back(LayerSpec::softmax());
  for (const auto& l : a.layers)
    l.validate();
  a.shapes();
  return a;
}

std::size_t CnnArch::feature_length() const {
  const auto a = architecture();
  const auto shapes = a.shapes();
  // Output of the last pooling layer: 4 blocks of 4 layers.
  return shapes[4 * filters.size() - 1].size();
}

json to_json(const CnnArch& a) {
  return {{"input_length", a.input_length}, {"channels", a.channels}, {"filters", a.filters},
          {"kernel", a.kernel},             {"first_stride", a.first_stride}, {"pool", a.pool},
          {"dropout", a.dropout},           {"dense_units", a.dense_units},   {"classes", a.classes}};
}

CnnArch cnn_arch_from_json(const json& j, CnnArch a) {
  try {
    check_keys(j, {"input_length", "channels", "filters", "kernel", "first_stride", "pool", "dropout", "dense_units",
                   "classes"},
               "cnn architecture");
    a.input_length = j.value("input_length", a.input_length);
    a.channels = j.value("channels", a.channels);
    if (j.contains("filters"))
      a.filters = j.at("filters").get<std::array<std::size_t, 4>>();
    a.kernel = j.value("kernel", a.kernel);
    a.first_stride = j.value("first_stride", a.first_stride);
    a.pool = j.value("pool", a.pool);
    a.dropout = j.value("dropout", a.dropout);
    a.dense_units = j.value("dense_units", a.dense_units);
    a.classes = j.value("classes", a.classes);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cnn architecture: ") + e.what());
  }
  return a;
}

nn::Network build_cnn(const CnnArch& arch, std::uint64_t seed) {
  return nn::init_network(arch.architecture(), seed, nn::Init::glorot_uniform);
}

std::vector<std::uint64_t> bank_seeds(std::uint64_t seed, std::size_t members) {
  std::vector<std::uint64_t> out;
  std::set<std::uint64_t> seen;
  for (std::uint64_t k = 0; out.size() < members; ++k) {
    const std::uint64_t s = derive_seed(seed, {0xc0, k});
    if (seen.insert(s).second)
      out.push_back(s);
  }
  return out;
}

std::vector<double> one_hot(std::span<const int> labels, std::size_t classes) {
  std::vector<double> out(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw DataError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    out[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return out;
}

CnnBank train_bank(const BankConfig& config, std::span<const double> inputs, std::span<const int> labels,
                   std::span<const std::uint64_t> seeds, WorkerPool* pool) {
  const std::size_t width = config.arch.channels * config.arch.input_length;
  if (labels.empty())
    throw DataError("cnn bank: empty training set");
  if (inputs.size() != labels.size() * width)
    throw ShapeError("cnn bank: expected " + std::to_string(labels.size()) + " rows of " + std::to_string(width) +
                     " values");
  if (seeds.size() != config.members)
    throw InvalidArgument("cnn bank: need one seed per member");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw InvalidArgument("cnn bank: member seeds must be pairwise distinct");
  if (config.epochs < 1)
    throw ConfigError("cnn bank: epochs must be >= 1");
  std::vector<bool> present(config.arch.classes, false);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= config.arch.classes)
      throw DataError("cnn bank: label " + std::to_string(l) + " outside [0, " +
                      std::to_string(config.arch.classes) + ")");
    present[static_cast<std::size_t>(l)] = true;
  }
  for (std::size_t c = 0; c < present.size(); ++c)
    if (!present[c])
      throw DataError("cnn bank: class " + std::to_string(c) + " has no training samples");

  optim::SampleSet data;
  data.count = labels.size();
  data.inputs.assign(inputs.begin(), inputs.end());
  data.targets = one_hot(labels, config.arch.classes);

  CnnBank bank;
  bank.arch = config.arch;
  bank.seeds.assign(seeds.begin(), seeds.end());
  bank.members.resize(config.members);
  bank.history.resize(config.members);

  optim::TrainOptions opt;
  opt.optimizer = optim::OptimizerKind::adam;
  opt.adam = config.adam;
  opt.loss = nn::LossKind::cross_entropy;
  opt.stop.max_epochs = config.epochs;
  opt.stop.target_error = 0.0;

  parallel_for(pool, config.members, [&](std::size_t k) {
    try {
      auto o = opt;
      o.seed = derive_seed(seeds[k], {0x7a});
      auto r = optim::train(build_cnn(config.arch, seeds[k]), data, o);
      bank.members[k] = std::move(r.network);
      bank.history[k] = std::move(r.history);
    } catch (const Error& e) {
      throw TrainingError("cnn bank member " + std::to_string(k) + " failed: " + e.what());
    }
  });
  return bank;
}

std::vector<double> extract_features(const CnnBank& bank, std::span<const double> inputs, std::size_t count,
                                     WorkerPool* pool) {
  const std::size_t width = bank.arch.channels * bank.arch.input_length;
  if (inputs.size() != count * width)
    throw ShapeError("extract_features: expected " + std::to_string(count) + " rows of " + std::to_string(width) +
                     " values, got " + std::to_string(inputs.size()) + " values");
  const std::size_t k_count = bank.members.size();
  const std::size_t c = bank.arch.classes;
  std::vector<double> out(count * k_count * c);
  parallel_for(pool, k_count, [&](std::size_t k) {
    const auto probs = optim::predict_all(bank.members[k], inputs, count);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out[(i * k_count + k) * c + j] = probs[i * c + j];
  });
  return out;
}

namespace {

std::string member_file(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%02zu.bin", k);
  return buf;
}

json history_json(const std::vector<optim::EpochRecord>& h) {
  json out = json::array();
  for (const auto& r : h)
    out.push_back({r.epoch, r.train_error, r.step_parameter});
  return out;
}

} // namespace

void save_bank(const CnnBank& bank, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json members = json::array();
  for (std::size_t k = 0; k < bank.members.size(); ++k) {
    save_network(dir / member_file(k), bank.members[k], {{"member", k}, {"seed", bank.seeds[k]}});
    members.push_back({{"file", member_file(k)},
                       {"seed", bank.seeds[k]},
                       {"history", k < bank.history.size() ? history_json(bank.history[k]) : json::array()}});
  }
  const json manifest = {{"format", "cmst-cnn-bank"},
                         {"version", 1},
                         {"arch", to_json(bank.arch)},
                         {"members", members}};
  write_text_file(dir / "bank.json", manifest.dump(2) + "\n");
}

CnnBank load_bank(const fs::path& dir) {
  const json m = read_json_file(dir / "bank.json");
  CnnBank bank;
  try {
    if (m.value("format", "") != "cmst-cnn-bank")
      throw DataError((dir / "bank.json").string() + ": not a cnn bank manifest");
    bank.arch = cnn_arch_from_json(m.at("arch"));
    const auto expected = bank.arch.architecture();
    for (const auto& e : m.at("members")) {
      auto net = load_network(dir / e.at("file").get<std::string>());
      if (!(net.arch == expected))
        throw DataError(dir.string() + ": member architecture differs from the bank manifest");
      bank.members.push_back(std::move(net));
      bank.seeds.push_back(e.at("seed").get<std::uint64_t>());
      std::vector<optim::EpochRecord> h;
      for (const auto& r : e.value("history", json::array())) {
        optim::EpochRecord rec;
        rec.epoch = r.at(0).get<std::size_t>();
        rec.train_error = r.at(1).get<double>();
        rec.validation_error = std::numeric_limits<double>::quiet_NaN();
        rec.step_parameter = r.at(2).get<double>();
        h.push_back(rec);
      }
      bank.history.push_back(std::move(h));
    }
  } catch (const json::exception& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return bank;
}

} // namespace cmst::cnn
