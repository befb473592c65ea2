// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/run_config.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <thread>

namespace cmst {

using nlohmann::json;

namespace {

std::size_t parse_count(std::string_view s, const std::string& whole) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("cannot read '" + whole + "' as a count list");
  return v;
}

} // namespace

std::vector<std::size_t> parse_count_list(const std::string& text) {
  std::vector<std::size_t> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const std::size_t a = parse_count(std::string_view(text).substr(0, dots), text);
    const std::size_t b = parse_count(std::string_view(text).substr(dots + 2), text);
    if (a > b)
      throw ConfigError("range '" + text + "' runs backwards");
    for (std::size_t v = a; v <= b; ++v)
      out.push_back(v);
    return out;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    out.push_back(parse_count(std::string_view(text).substr(start, comma - start), text));
    start = comma + 1;
  }
  return out;
}

RunConfig resolve_run_config(const json& j) {
  if (!j.is_object())
    throw ConfigError("run config must be a JSON object");
  RunConfig rc;
  try {
    check_keys(j, {"method", "data", "classes", "seed", "workers", "output", "eval", "bench"}, "run config");
    if (!j.contains("seed") || !j.at("seed").is_number_unsigned())
      throw ConfigError("run config needs a non-negative integer \"seed\"");
    rc.seed = j.at("seed").get<std::uint64_t>();

    rc.method = method_config_from_json(j.value("method", json::object()));

    if (!j.contains("data"))
      throw ConfigError("run config needs a \"data\" section with \"manifest\" or \"generate\"");
    const json& d = j.at("data");
    check_keys(d, {"manifest", "generate"}, "run config data");
    if (d.contains("manifest") == d.contains("generate"))
      throw ConfigError("\"data\" needs exactly one of \"manifest\" and \"generate\"");
    if (d.contains("manifest")) {
      rc.data.manifest = d.at("manifest").get<std::string>();
      if (!std::filesystem::exists(*rc.data.manifest))
        throw DataError("dataset manifest " + *rc.data.manifest + " does not exist");
    } else {
      json g = d.at("generate");
      if (!g.is_object())
        throw ConfigError("\"data.generate\" must be an object");
      if (!g.contains("seed"))
        g["seed"] = rc.seed;
      rc.data.generate = signal::generator_config_from_json(g);
      signal::validate(*rc.data.generate);
    }

    if (j.contains("classes") && !j.at("classes").is_null()) {
      rc.classes = j.at("classes").get<std::size_t>();
      if (*rc.classes < 2)
        throw ConfigError("classes must be >= 2");
    }
    rc.workers = j.value("workers", std::size_t{0});
    if (rc.workers == 0)
      rc.workers = std::max(1u, std::thread::hardware_concurrency());
    rc.output = j.value("output", std::string("."));

    const json e = j.value("eval", json::object());
    check_keys(e, {"repeats", "max_folds", "classes", "parallel_trials"}, "run config eval");
    rc.eval.repeats = e.value("repeats", rc.eval.repeats);
    if (e.contains("max_folds") && !e.at("max_folds").is_null())
      rc.eval.max_folds = e.at("max_folds").get<std::size_t>();
    if (e.contains("classes")) {
      const json& c = e.at("classes");
      rc.eval.class_counts = c.is_string() ? parse_count_list(c.get<std::string>())
                                           : c.get<std::vector<std::size_t>>();
    }
    rc.eval.parallel_trials = e.value("parallel_trials", rc.eval.parallel_trials);
    if (rc.eval.repeats < 1)
      throw ConfigError("eval.repeats must be >= 1");
    if (rc.eval.max_folds && *rc.eval.max_folds < 1)
      throw ConfigError("eval.max_folds must be >= 1");

    const json b = j.value("bench", json::object());
    check_keys(b, {"workers", "repetitions"}, "run config bench");
    if (b.contains("workers"))
      rc.bench.workers = b.at("workers").is_string() ? parse_count_list(b.at("workers").get<std::string>())
                                                     : b.at("workers").get<std::vector<std::size_t>>();
    rc.bench.repetitions = b.value("repetitions", rc.bench.repetitions);
    for (auto w : rc.bench.workers)
      if (w < 1)
        throw ConfigError("bench.workers entries must be >= 1");
    if (rc.bench.workers.empty() || rc.bench.repetitions < 1)
      throw ConfigError("bench needs at least one worker count and one repetition");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  rc.method.validate();
  return rc;
}

json to_json(const RunConfig& rc) {
  json data = json::object();
  if (rc.data.manifest)
    data["manifest"] = *rc.data.manifest;
  if (rc.data.generate)
    data["generate"] = signal::to_json(*rc.data.generate);
  return {{"method", to_json(rc.method)},
          {"data", data},
          {"classes", rc.classes ? json(*rc.classes) : json(nullptr)},
          {"seed", rc.seed},
          {"workers", rc.workers},
          {"output", rc.output},
          {"eval",
           {{"repeats", rc.eval.repeats},
            {"max_folds", rc.eval.max_folds ? json(*rc.eval.max_folds) : json(nullptr)},
            {"classes", rc.eval.class_counts},
            {"parallel_trials", rc.eval.parallel_trials}}},
          {"bench", {{"workers", rc.bench.workers}, {"repetitions", rc.bench.repetitions}}}};
}

} // namespace cmst
