// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/signal.hpp"

#include "cmst/error.hpp"
#include "cmst/json_keys.hpp"
#include "cmst/random.hpp"
#include "cmst/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <utility>

namespace cmst::signal {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> frequency_grid(std::size_t points, double start_hz, double stop_hz) {
  if (points < 2 || !(stop_hz > start_hz))
    throw InvalidArgument("frequency grid needs >= 2 points and stop > start");
  std::vector<double> f(points);
  const double step = (stop_hz - start_hz) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i)
    f[i] = start_hz + step * static_cast<double>(i);
  f.back() = stop_hz;
  return f;
}

void Trace::validate() const {
  if (frequency_hz.size() != kTracePoints || samples.size() != kTracePoints)
    throw DataError("trace has " + std::to_string(samples.size()) + " points, expected " +
                    std::to_string(kTracePoints));
  const double mean_step = (frequency_hz.back() - frequency_hz.front()) / double(kTracePoints - 1);
  for (std::size_t i = 1; i < kTracePoints; ++i) {
    const double step = frequency_hz[i] - frequency_hz[i - 1];
    if (!(step > 0.0))
      throw DataError("trace frequencies not strictly increasing at point " + std::to_string(i));
    if (std::abs(step - mean_step) > 1e-6 * mean_step)
      throw DataError("trace frequencies not linearly spaced at point " + std::to_string(i));
  }
  for (const auto& s : samples)
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
      throw DataError("trace contains a non-finite sample");
}

// ---------------------------------------------------------------------------
// Generator

namespace {

constexpr double kGHz = 1e9;
constexpr double kMHz = 1e6;

Complex lorentzian(const Resonance& r, double f) {
  return r.amplitude / Complex(1.0, 2.0 * (f - r.center_hz) / r.width_hz);
}

void validate_spec(const SyntheticClassSpec& spec, const std::string& what) {
  for (std::size_t i = 0; i < spec.resonances.size(); ++i) {
    const auto& r = spec.resonances[i];
    if (!(r.center_hz >= kSweepStartHz && r.center_hz <= kSweepStopHz))
      throw ConfigError(what + " resonance " + std::to_string(i) + " center " + to_text(r.center_hz) +
                        " Hz lies outside the sweep band");
    if (!(r.width_hz > 0.0))
      throw ConfigError(what + " resonance " + std::to_string(i) + " width must be > 0");
    if (!std::isfinite(r.amplitude.real()) || !std::isfinite(r.amplitude.imag()))
      throw ConfigError(what + " resonance " + std::to_string(i) + " amplitude must be finite");
  }
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise))
    throw ConfigError(what + " noise must be >= 0");
  if (!(spec.jitter >= 0.0) || !std::isfinite(spec.jitter))
    throw ConfigError(what + " jitter must be >= 0");
}

void add_response(std::vector<Complex>& out, const SyntheticClassSpec& spec, std::size_t angle_index,
                  Rng& rng, const std::vector<double>& grid) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Complex rot = std::polar(spec.angle_gain[angle_index], spec.angle_phase[angle_index]);
  for (const auto& base : spec.resonances) {
    Resonance r = base;
    // Draw all three perturbations even when jitter is 0 to keep RNG streams aligned.
    const double dc = normal(rng), da = normal(rng), dp = normal(rng);
    r.center_hz += spec.jitter * r.width_hz * dc;
    r.amplitude *= std::polar(std::max(0.0, 1.0 + spec.jitter * da), spec.jitter * dp);
    r.amplitude *= rot;
    for (std::size_t i = 0; i < grid.size(); ++i)
      out[i] += lorentzian(r, grid[i]);
  }
}

} // namespace

void validate(const GeneratorConfig& config) {
  if (config.classes.size() < 2)
    throw ConfigError("generator needs at least 2 classes");
  if (config.samples_per_class < 2)
    throw ConfigError("generator needs at least 2 samples per class");
  for (std::size_t c = 0; c < config.classes.size(); ++c)
    validate_spec(config.classes[c], "class " + std::to_string(c));
  validate_spec(config.background, "background");
}

Trace synthesize_trace(const SyntheticClassSpec& spec, const SyntheticClassSpec& background,
                       std::size_t angle_index, std::uint64_t seed, const std::vector<double>& grid) {
  Rng rng(seed);
  Trace t;
  t.frequency_hz = grid;
  t.samples.assign(grid.size(), Complex{});
  t.angle = kAngles.at(angle_index);
  add_response(t.samples, background, angle_index, rng, grid);
  add_response(t.samples, spec, angle_index, rng, grid);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& s : t.samples) {
    const double re = normal(rng), im = normal(rng);
    s += Complex(spec.noise * re, spec.noise * im);
  }
  return t;
}

GeneratorConfig benchmark_config(std::size_t num_classes, double difficulty, std::uint64_t seed,
                                 std::size_t samples_per_class) {
  if (num_classes < 2)
    throw ConfigError("benchmark needs at least 2 classes");
  if (!(difficulty >= 0.0 && difficulty <= 1.0))
    throw ConfigError("difficulty must lie in [0, 1]");
  Rng rng(derive_seed(seed, {0x5bec}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  constexpr std::size_t kResonances = 3;

  auto random_resonance = [&] {
    Resonance r;
    r.center_hz = uniform(0.9, 6.5) * kGHz;
    r.width_hz = uniform(60.0, 250.0) * kMHz;
    r.amplitude = std::polar(uniform(0.5, 1.0), uniform(-std::numbers::pi, std::numbers::pi));
    return r;
  };

  GeneratorConfig cfg;
  cfg.seed = seed;
  cfg.samples_per_class = samples_per_class;
  cfg.background.noise = 0.0;
  cfg.background.jitter = 0.005;
  cfg.background.resonances = {Resonance{2.0 * kGHz, 1.5 * kGHz, {0.25, 0.1}},
                               Resonance{5.0 * kGHz, 2.0 * kGHz, {-0.1, 0.2}}};

  std::vector<Resonance> prototype(kResonances);
  for (auto& r : prototype)
    r = random_resonance();
  std::array<double, kAngles.size()> proto_gain{}, proto_phase{};
  for (std::size_t a = 0; a < kAngles.size(); ++a) {
    proto_gain[a] = uniform(0.6, 1.4);
    proto_phase[a] = uniform(-std::numbers::pi, std::numbers::pi);
  }

  for (std::size_t c = 0; c < num_classes; ++c) {
    const double h = difficulty * static_cast<double>(c) / static_cast<double>(num_classes - 1);
    SyntheticClassSpec spec;
    for (std::size_t i = 0; i < kResonances; ++i) {
      const Resonance own = random_resonance();
      Resonance r;
      r.center_hz = (1.0 - h) * own.center_hz + h * prototype[i].center_hz;
      r.width_hz = (1.0 - h) * own.width_hz + h * prototype[i].width_hz;
      r.amplitude = ((1.0 - h) * own.amplitude + h * prototype[i].amplitude) * (1.0 - 0.6 * h);
      spec.resonances.push_back(r);
    }
    for (std::size_t a = 0; a < kAngles.size(); ++a) {
      spec.angle_gain[a] = (1.0 - h) * uniform(0.6, 1.4) + h * proto_gain[a];
      spec.angle_phase[a] = (1.0 - h) * uniform(-std::numbers::pi, std::numbers::pi) + h * proto_phase[a];
    }
    spec.noise = 0.02 + 0.25 * h;
    spec.jitter = 0.01 + 0.05 * h;
    cfg.classes.push_back(std::move(spec));
  }
  return cfg;
}

namespace {

json to_json(const SyntheticClassSpec& s) {
  json res = json::array();
  for (const auto& r : s.resonances)
    res.push_back({{"center_hz", r.center_hz},
                   {"width_hz", r.width_hz},
                   {"amplitude", {r.amplitude.real(), r.amplitude.imag()}}});
  return {{"resonances", res},
          {"angle_gain", s.angle_gain},
          {"angle_phase", s.angle_phase},
          {"noise", s.noise},
          {"jitter", s.jitter}};
}

SyntheticClassSpec spec_from_json(const json& j) {
  SyntheticClassSpec s;
  check_keys(j, {"resonances", "angle_gain", "angle_phase", "noise", "jitter"}, "class spec");
  for (const auto& r : j.at("resonances")) {
    const auto& a = r.at("amplitude");
    s.resonances.push_back(Resonance{r.at("center_hz").get<double>(), r.at("width_hz").get<double>(),
                                     Complex(a.at(0).get<double>(), a.at(1).get<double>())});
  }
  if (j.contains("angle_gain"))
    s.angle_gain = j.at("angle_gain").get<std::array<double, 3>>();
  if (j.contains("angle_phase"))
    s.angle_phase = j.at("angle_phase").get<std::array<double, 3>>();
  s.noise = j.value("noise", 0.0);
  s.jitter = j.value("jitter", 0.0);
  return s;
}

} // namespace

json to_json(const GeneratorConfig& config) {
  json classes = json::array();
  for (const auto& c : config.classes)
    classes.push_back(to_json(c));
  return {{"classes", classes},
          {"background", to_json(config.background)},
          {"samples_per_class", config.samples_per_class},
          {"background_traces", config.background_traces},
          {"seed", config.seed}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  try {
    check_keys(j, {"benchmark", "classes", "background", "samples_per_class", "background_traces", "seed"},
               "generator spec");
    GeneratorConfig cfg;
    // A benchmark shorthand expands to the built-in mixed-difficulty specs.
    if (j.contains("benchmark")) {
      const auto& b = j.at("benchmark");
      check_keys(b, {"classes", "difficulty"}, "generator benchmark");
      cfg = benchmark_config(b.value("classes", std::size_t{17}), b.value("difficulty", 1.0),
                             j.value("seed", std::uint64_t{2026}), j.value("samples_per_class", std::size_t{12}));
    } else {
      for (const auto& c : j.at("classes"))
        cfg.classes.push_back(spec_from_json(c));
      if (j.contains("background"))
        cfg.background = spec_from_json(j.at("background"));
      cfg.samples_per_class = j.value("samples_per_class", std::size_t{12});
      cfg.seed = j.value("seed", std::uint64_t{0});
    }
    cfg.background_traces = j.value("background_traces", cfg.background_traces);
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Normalization

std::vector<double> normalize_block(std::span<const double> values, std::string_view block) {
  const std::size_t n = values.size();
  if (n < 2)
    throw DataError(std::string(block) + ": need at least 2 values to normalize");
  double mean = 0.0;
  for (double v : values)
    mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values)
    ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd >= 1e-12))
    throw DataError(std::string(block) + ": standard deviation is zero, cannot normalize");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = (values[i] - mean) / sd;
  return out;
}

Fingerprint build_fingerprint(std::span<const Trace> traces, int label) {
  if (traces.size() != kAngles.size())
    throw DataError("fingerprint needs exactly 3 traces, got " + std::to_string(traces.size()));
  std::array<const Trace*, 3> by_angle{};
  for (const auto& t : traces) {
    const auto it = std::find(kAngles.begin(), kAngles.end(), t.angle);
    if (it == kAngles.end())
      throw DataError("fingerprint trace has angle " + std::to_string(t.angle) + ", expected 0, 45 or 90");
    auto& slot = by_angle[static_cast<std::size_t>(it - kAngles.begin())];
    if (slot)
      throw DataError("fingerprint has duplicate angle " + std::to_string(t.angle));
    slot = &t;
  }
  for (const auto* t : by_angle) {
    t->validate();
    if (t->object != by_angle[0]->object || t->session != by_angle[0]->session)
      throw DataError("fingerprint traces come from different objects or sessions");
  }

  Fingerprint fp;
  fp.label = label;
  fp.values.reserve(kFingerprintLength);
  std::vector<double> part(kTracePoints);
  for (std::size_t a = 0; a < kAngles.size(); ++a) {
    for (int component = 0; component < 2; ++component) {
      for (std::size_t i = 0; i < kTracePoints; ++i)
        part[i] = component == 0 ? by_angle[a]->samples[i].real() : by_angle[a]->samples[i].imag();
      const std::string name = "angle " + std::to_string(kAngles[a]) + (component == 0 ? " real" : " imag");
      const auto norm = normalize_block(part, name);
      fp.values.insert(fp.values.end(), norm.begin(), norm.end());
    }
  }
  return fp;
}

void check_fingerprint(const Fingerprint& fp, double tol) {
  if (fp.values.size() != kFingerprintLength)
    throw DataError("fingerprint has " + std::to_string(fp.values.size()) + " values, expected " +
                    std::to_string(kFingerprintLength));
  for (std::size_t b = 0; b < kFingerprintLength / kTracePoints; ++b) {
    const double* v = fp.values.data() + b * kTracePoints;
    double mean = 0.0;
    for (std::size_t i = 0; i < kTracePoints; ++i)
      mean += v[i];
    mean /= double(kTracePoints);
    double ss = 0.0;
    for (std::size_t i = 0; i < kTracePoints; ++i)
      ss += (v[i] - mean) * (v[i] - mean);
    const double sd = std::sqrt(ss / double(kTracePoints - 1));
    if (std::abs(mean) > tol || std::abs(sd - 1.0) > tol)
      throw DataError("fingerprint block " + std::to_string(b) + " is not normalized (mean " + to_text(mean) +
                      ", std " + to_text(sd) + ")");
  }
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(fingerprints.size());
  for (const auto& fp : fingerprints)
    out.push_back(fp.label);
  return out;
}

std::vector<double> Dataset::feature_matrix() const {
  std::vector<double> out;
  out.reserve(fingerprints.size() * kFingerprintLength);
  for (const auto& fp : fingerprints)
    out.insert(out.end(), fp.values.begin(), fp.values.end());
  return out;
}

Dataset Dataset::first_classes(std::size_t count) const {
  if (count < 1 || count > num_classes)
    throw InvalidArgument("class count " + std::to_string(count) + " outside [1, " +
                          std::to_string(num_classes) + "]");
  Dataset out;
  out.num_classes = count;
  out.samples_per_class = samples_per_class;
  out.background = background;
  out.provenance = provenance;
  out.provenance["class_subset"] = count;
  for (std::size_t i = 0; i < fingerprints.size(); ++i) {
    if (fingerprints[i].label >= static_cast<int>(count))
      continue;
    out.fingerprints.push_back(fingerprints[i]);
    if (traces.size() == 3 * fingerprints.size())
      out.traces.insert(out.traces.end(), traces.begin() + std::ptrdiff_t(3 * i),
                        traces.begin() + std::ptrdiff_t(3 * i + 3));
  }
  return out;
}

Dataset generate_dataset(const GeneratorConfig& config) {
  validate(config);
  const auto grid = frequency_grid();
  Dataset ds;
  ds.num_classes = config.classes.size();
  ds.samples_per_class = config.samples_per_class;
  ds.provenance = {{"generator", to_json(config)}};
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    for (std::size_t k = 0; k < config.samples_per_class; ++k) {
      std::array<Trace, 3> triple;
      for (std::size_t a = 0; a < kAngles.size(); ++a) {
        triple[a] = synthesize_trace(config.classes[c], config.background, a,
                                     derive_seed(config.seed, {c, k, a}), grid);
        triple[a].object = static_cast<int>(c);
        triple[a].session = static_cast<int>(k);
      }
      ds.fingerprints.push_back(build_fingerprint(triple, static_cast<int>(c)));
      check_fingerprint(ds.fingerprints.back());
      for (auto& t : triple)
        ds.traces.push_back(std::move(t));
    }
  }
  SyntheticClassSpec empty;
  empty.noise = config.classes.front().noise;
  for (std::size_t k = 0; k < config.background_traces; ++k) {
    Trace t = synthesize_trace(empty, config.background, 0, derive_seed(config.seed, {0xb9, k}), grid);
    t.session = static_cast<int>(k);
    ds.background.push_back(std::move(t));
  }
  return ds;
}

void write_trace_csv(std::ostream& os, const Trace& trace) {
  os << "frequency_hz,real,imag\n";
  for (std::size_t i = 0; i < trace.samples.size(); ++i)
    os << to_text(trace.frequency_hz[i]) << ',' << to_text(trace.samples[i].real()) << ','
       << to_text(trace.samples[i].imag()) << '\n';
}

Trace read_trace_csv(std::istream& is, const std::string& source) {
  std::string line;
  if (!std::getline(is, line))
    throw DataError(source + ": empty trace file");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  if (line != "frequency_hz,real,imag")
    throw DataError(source + ": expected header 'frequency_hz,real,imag'");
  Trace t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::array<double, 3> v{};
    std::size_t pos = 0;
    for (std::size_t f = 0; f < 3; ++f) {
      const std::size_t end = f < 2 ? line.find(',', pos) : line.size();
      if (end == std::string::npos || (f == 2 && line.find(',', pos) != std::string::npos) ||
          !parse_double(std::string_view(line).substr(pos, end - pos), v[f]))
        throw DataError(source + ":" + std::to_string(lineno) + ": malformed row");
      pos = end + 1;
    }
    t.frequency_hz.push_back(v[0]);
    t.samples.emplace_back(v[1], v[2]);
  }
  if (t.samples.size() != kTracePoints)
    throw DataError(source + ": expected " + std::to_string(kTracePoints) + " points, found " +
                    std::to_string(t.samples.size()));
  try {
    t.validate();
  } catch (const DataError& e) {
    throw DataError(source + ": " + e.what());
  }
  return t;
}

void save_trace(const Trace& trace, const fs::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + file.string());
  write_trace_csv(os, trace);
  if (!os)
    throw IoError("write failed: " + file.string());
}

Trace load_trace(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is)
    throw IoError("cannot read " + file.string());
  return read_trace_csv(is, file.string());
}

namespace {

std::string trace_name(int object, int session, int angle) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "traces/c%02d_s%02d_a%03d.csv", object, session, angle);
  return buf;
}

} // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "traces", ec);
  if (ec)
    throw IoError("cannot create " + (dir / "traces").string() + ": " + ec.message());
  if (ds.traces.size() != 3 * ds.fingerprints.size())
    throw DataError("dataset has no traces to save");
  json samples = json::array();
  for (std::size_t i = 0; i < ds.fingerprints.size(); ++i) {
    json files = json::array();
    for (std::size_t a = 0; a < 3; ++a) {
      const Trace& t = ds.traces[3 * i + a];
      const std::string name = trace_name(t.object, t.session, t.angle);
      save_trace(t, dir / name);
      files.push_back({{"file", name}, {"angle", t.angle}});
    }
    samples.push_back({{"label", ds.fingerprints[i].label},
                       {"object", ds.traces[3 * i].object},
                       {"session", ds.traces[3 * i].session},
                       {"traces", files}});
  }
  json background = json::array();
  for (std::size_t k = 0; k < ds.background.size(); ++k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "traces/background_%03zu.csv", k);
    save_trace(ds.background[k], dir / buf);
    background.push_back({{"file", buf}, {"session", ds.background[k].session}});
  }
  const json manifest = {{"format", "cmst-dataset"},
                         {"version", 1},
                         {"num_classes", ds.num_classes},
                         {"samples_per_class", ds.samples_per_class},
                         {"points", kTracePoints},
                         {"provenance", ds.provenance},
                         {"samples", samples},
                         {"background", background}};
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os)
    throw IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
  if (!os)
    throw IoError("write failed: " + (dir / "manifest.json").string());
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is)
    throw IoError("cannot read " + manifest_path.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  try {
    if (m.value("format", "") != "cmst-dataset")
      throw DataError(manifest_path.string() + ": not a cmst dataset manifest");
    ds.num_classes = m.at("num_classes").get<std::size_t>();
    ds.provenance = m.value("provenance", json::object());
    std::vector<std::size_t> per_class(ds.num_classes, 0);
    for (const auto& s : m.at("samples")) {
      const int label = s.at("label").get<int>();
      if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes)
        throw DataError(manifest_path.string() + ": label " + std::to_string(label) + " out of range");
      std::array<Trace, 3> triple;
      const auto& files = s.at("traces");
      if (files.size() != 3)
        throw DataError(manifest_path.string() + ": every sample needs 3 traces");
      for (std::size_t a = 0; a < 3; ++a) {
        triple[a] = load_trace(root / files[a].at("file").get<std::string>());
        triple[a].angle = files[a].at("angle").get<int>();
        triple[a].object = s.value("object", label);
        triple[a].session = s.value("session", 0);
      }
      std::sort(triple.begin(), triple.end(), [](const Trace& a, const Trace& b) { return a.angle < b.angle; });
      ds.fingerprints.push_back(build_fingerprint(triple, label));
      check_fingerprint(ds.fingerprints.back());
      for (auto& t : triple)
        ds.traces.push_back(std::move(t));
      ++per_class[static_cast<std::size_t>(label)];
    }
    for (const auto& b : m.value("background", json::array())) {
      Trace t = load_trace(root / b.at("file").get<std::string>());
      t.session = b.value("session", 0);
      ds.background.push_back(std::move(t));
    }
    const bool equal = std::all_of(per_class.begin(), per_class.end(),
                                   [&](std::size_t n) { return n == per_class.front(); });
    ds.samples_per_class = equal && !per_class.empty() ? per_class.front() : 0;
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Signal strength

Trace background_average(std::span<const Trace> traces) {
  if (traces.empty())
    throw DataError("background average needs at least one trace");
  Trace out;
  out.frequency_hz = traces.front().frequency_hz;
  out.samples.assign(out.frequency_hz.size(), Complex{});
  out.object = -1;
  for (const auto& t : traces) {
    if (t.frequency_hz != out.frequency_hz || t.samples.size() != out.samples.size())
      throw DataError("background traces are on different frequency grids");
    for (std::size_t i = 0; i < t.samples.size(); ++i)
      out.samples[i] += t.samples[i];
  }
  const double n = static_cast<double>(traces.size());
  for (auto& s : out.samples)
    s /= n;
  return out;
}

std::vector<double> subtracted_magnitude(const Trace& object, const Trace& background) {
  if (object.frequency_hz != background.frequency_hz || object.samples.size() != background.samples.size())
    throw DataError("object and background traces are on different frequency grids");
  std::vector<double> m(object.samples.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = std::abs(object.samples[i] - background.samples[i]);
  return m;
}

namespace {

double sample_std(std::span<const double> v) {
  if (v.size() < 2)
    return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0.0;
  for (double x : v)
    ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size() - 1));
}

} // namespace

double snr_db(std::span<const double> m, const SnrConfig& cfg) {
  const std::size_t n = m.size();
  if (cfg.signal_window < 1 || cfg.signal_window > n)
    throw ConfigError("SNR signal window does not fit the trace");
  if (cfg.flat_count < 2 || cfg.flat_begin + cfg.flat_count > n)
    throw ConfigError("SNR flat region does not fit the trace");
  const std::size_t peak = static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin());
  std::size_t start = peak >= cfg.signal_window / 2 ? peak - cfg.signal_window / 2 : 0;
  start = std::min(start, n - cfg.signal_window);
  const auto window = m.subspan(start, cfg.signal_window);
  const double signal = std::accumulate(window.begin(), window.end(), 0.0) / double(cfg.signal_window);
  const double noise = sample_std(m.subspan(cfg.flat_begin, cfg.flat_count));
  if (!(noise > 0.0))
    throw DataError("SNR noise estimate is zero");
  return 20.0 * std::log10(signal / noise);
}

double snr_db(const Trace& object, const Trace& background, const SnrConfig& config) {
  return snr_db(subtracted_magnitude(object, background), config);
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw InvalidArgument("trapezoid: x and y differ in length");
  double area = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i)
    area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return area;
}

std::vector<RrcsEntry> rrcs(std::span<const Trace> traces, const Trace& background) {
  if (traces.empty())
    throw DataError("rRCS needs at least one trace");
  std::map<std::pair<int, int>, std::vector<double>> areas;
  for (const auto& t : traces)
    areas[{t.object, t.angle}].push_back(trapezoid(t.frequency_hz, subtracted_magnitude(t, background)));

  std::vector<RrcsEntry> out;
  double largest = 0.0;
  for (const auto& [key, a] : areas) {
    RrcsEntry e;
    e.object = key.first;
    e.angle = key.second;
    e.value = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
    e.traces = a.size();
    largest = std::max(largest, e.value);
    out.push_back(e);
  }
  if (!(largest > 0.0))
    throw DataError("rRCS: every background-subtracted trace has zero area");
  for (auto& e : out) {
    std::vector<double> rel;
    for (double a : areas[{e.object, e.angle}])
      rel.push_back(a / largest);
    e.value /= largest;
    e.std = sample_std(rel);
  }
  return out;
}

std::vector<SignalTableRow> signal_table(std::span<const Trace> traces, const Trace& background,
                                         const SnrConfig& config) {
  std::map<std::pair<int, int>, std::vector<double>> snrs;
  for (const auto& t : traces)
    snrs[{t.object, t.angle}].push_back(snr_db(t, background, config));
  std::vector<SignalTableRow> rows;
  for (const auto& e : rrcs(traces, background)) {
    const auto& s = snrs[{e.object, e.angle}];
    SignalTableRow r;
    r.object = e.object;
    r.angle = e.angle;
    r.snr_mean = std::accumulate(s.begin(), s.end(), 0.0) / double(s.size());
    r.snr_std = sample_std(s);
    r.rrcs = e.value;
    r.rrcs_std = e.std;
    rows.push_back(r);
  }
  return rows;
}

void write_signal_table_csv(std::ostream& os, const std::vector<SignalTableRow>& rows) {
  os << "object,angle,snr_db,snr_std,rrcs,rrcs_std\n";
  for (const auto& r : rows)
    os << r.object << ',' << r.angle << ',' << to_text(r.snr_mean) << ',' << to_text(r.snr_std) << ','
       << to_text(r.rrcs) << ',' << to_text(r.rrcs_std) << '\n';
}

} // namespace cmst::signal
