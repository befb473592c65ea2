// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Self-describing binary parameter files and small file helpers.
//
// Layout: the 8 bytes "CMSTNET\0", a little-endian u32 format version, a u64
// header length, a JSON header (architecture, tensor shapes, caller metadata)
// and then every tensor's values as little-endian IEEE doubles in layer order,
// trainable before running. Identical networks give identical bytes.

#include "cmst/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

namespace cmst {

inline constexpr std::uint32_t kNetworkFormatVersion = 1;

nlohmann::json to_json(const nn::Architecture& arch);
nn::Architecture architecture_from_json(const nlohmann::json& j);

void write_network(std::ostream& os, const nn::Network& net, const nlohmann::json& meta = nlohmann::json::object());
/// Throws DataError on a bad magic, version or truncated payload.
nn::Network read_network(std::istream& is, const std::string& source, nlohmann::json* meta = nullptr);

void save_network(const std::filesystem::path& file, const nn::Network& net,
                  const nlohmann::json& meta = nlohmann::json::object());
nn::Network load_network(const std::filesystem::path& file, nlohmann::json* meta = nullptr);

/// Writes text to file, replacing it. Throws IoError.
void write_text_file(const std::filesystem::path& file, std::string_view text);
std::string read_text_file(const std::filesystem::path& file);
nlohmann::json read_json_file(const std::filesystem::path& file);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
/// Hex digest over every regular file below dir, visited in sorted path order
/// and keyed by relative path.
std::string hash_tree(const std::filesystem::path& dir);
std::string hex64(std::uint64_t v);

} // namespace cmst
