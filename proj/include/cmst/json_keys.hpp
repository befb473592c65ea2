// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cmst/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

namespace cmst {

/// Rejects misspelled settings instead of silently keeping their defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!j.is_object())
    throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& item : j.items())
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw ConfigError(std::string(where) + ": unknown key \"" + item.key() + "\"");
}

} // namespace cmst
