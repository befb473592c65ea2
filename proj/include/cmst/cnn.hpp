// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Stage-1 front end: a bank of K independently seeded 1-D CNNs whose softmax
// outputs are concatenated into a K x C feature vector.

#include "cmst/nn.hpp"
#include "cmst/optim.hpp"
#include "cmst/thread_pool.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cmst::cnn {

/// Four inner blocks (conv1d, batchnorm, relu, maxpool1d) and an outer block
/// (dropout, dense, dense(C), softmax).
struct CnnArch {
  std::size_t input_length = 9600;
  std::size_t channels = 1;  // 6 with input_length 1600 reads the fingerprint block-per-channel
  std::array<std::size_t, 4> filters = {8, 16, 32, 64};
  std::size_t kernel = 7;
  std::size_t first_stride = 1;  // stride of the first convolution only
  std::size_t pool = 4;
  double dropout = 0.5;
  std::size_t dense_units = 64;
  std::size_t classes = 17;

  /// Throws ShapeError naming the inner block whose output would be empty.
  nn::Architecture architecture() const;
  /// Flattened width entering the first dense layer.
  std::size_t feature_length() const;
  bool operator==(const CnnArch&) const = default;
};

nlohmann::json to_json(const CnnArch& arch);
CnnArch cnn_arch_from_json(const nlohmann::json& j, CnnArch defaults = {});

/// Glorot-uniform initialized network for arch.
nn::Network build_cnn(const CnnArch& arch, std::uint64_t seed);

struct BankConfig {
  CnnArch arch;
  std::size_t members = 12;
  std::size_t epochs = 3;
  optim::AdamConfig adam;
};

struct CnnBank {
  CnnArch arch;
  std::vector<std::uint64_t> seeds;
  std::vector<nn::Network> members;
  std::vector<std::vector<optim::EpochRecord>> history;

  std::size_t size() const noexcept { return members.size(); }
  std::size_t feature_width() const noexcept { return members.size() * arch.classes; }
};

/// K pairwise distinct member seeds derived from one base seed.
std::vector<std::uint64_t> bank_seeds(std::uint64_t seed, std::size_t members);

/// One-hot rows for integer labels in [0, classes).
std::vector<double> one_hot(std::span<const int> labels, std::size_t classes);

/// Trains every member with Adam and cross-entropy for exactly config.epochs
/// epochs on all samples; members run concurrently on pool. A member whose
/// loss diverges fails the bank with a TrainingError naming the member.
CnnBank train_bank(const BankConfig& config, std::span<const double> inputs, std::span<const int> labels,
                   std::span<const std::uint64_t> seeds, WorkerPool* pool = nullptr);

/// count x (K * C) features, member-major then class. Every C block is a
/// softmax output.
std::vector<double> extract_features(const CnnBank& bank, std::span<const double> inputs, std::size_t count,
                                     WorkerPool* pool = nullptr);

/// Writes bank.json and member_XX.bin into dir.
void save_bank(const CnnBank& bank, const std::filesystem::path& dir);
CnnBank load_bank(const std::filesystem::path& dir);

} // namespace cmst::cnn
