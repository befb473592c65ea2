// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Radar-like trace generation and ingestion, fingerprint assembly, background
// averaging and the SNR / relative RCS measurements.

#include "json.hpp"

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cmst::signal {

using Complex = std::complex<double>;

inline constexpr std::size_t kTracePoints = 1600;
inline constexpr double kSweepStartHz = 675e6;
inline constexpr double kSweepStopHz = 8.5e9;
inline constexpr std::array<int, 3> kAngles = {0, 45, 90};
inline constexpr std::size_t kFingerprintLength = kAngles.size() * 2 * kTracePoints;  // 9600

/// Linearly spaced sweep, both ends included.
std::vector<double> frequency_grid(std::size_t points = kTracePoints, double start_hz = kSweepStartHz,
                                   double stop_hz = kSweepStopHz);

/// One complex frequency sweep.
struct Trace {
  std::vector<double> frequency_hz;
  std::vector<Complex> samples;
  int object = -1;  // -1 for an empty-scene trace
  int angle = 0;    // degrees
  int session = 0;

  /// Throws DataError unless there are kTracePoints samples on a strictly
  /// increasing, linearly spaced grid.
  void validate() const;
  bool operator==(const Trace&) const = default;
};

struct Fingerprint {
  std::vector<double> values;  // kFingerprintLength
  int label = 0;
};

// ---------------------------------------------------------------------------
// Synthetic generator

struct Resonance {
  double center_hz = 0.0;
  double width_hz = 0.0;  // full width at half maximum
  Complex amplitude{1.0, 0.0};
};

struct SyntheticClassSpec {
  std::vector<Resonance> resonances;
  std::array<double, 3> angle_gain = {1.0, 1.0, 1.0};
  std::array<double, 3> angle_phase = {0.0, 0.0, 0.0};  // radians
  double noise = 0.0;   // std of each of the real and imaginary noise parts
  double jitter = 0.0;  // relative per-sample perturbation of centers, amplitudes and phases
};

struct GeneratorConfig {
  std::vector<SyntheticClassSpec> classes;
  /// Empty-scene response present in every trace (antenna coupling).
  SyntheticClassSpec background;
  std::size_t samples_per_class = 12;
  std::size_t background_traces = 16;
  std::uint64_t seed = 0;
};

/// Mixed-difficulty class specs. Class c gets hardness difficulty * c / (C - 1):
/// harder classes drift toward a shared prototype, lose amplitude and gain
/// noise and jitter, and their angle responses converge, so high class
/// indices are the hard ones.
GeneratorConfig benchmark_config(std::size_t num_classes = 17, double difficulty = 1.0,
                                 std::uint64_t seed = 2026, std::size_t samples_per_class = 12);

/// Throws ConfigError on a resonance outside the sweep band, a non-positive
/// width, negative noise or invalid counts.
void validate(const GeneratorConfig& config);

nlohmann::json to_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

/// Evaluates one trace of a spec at an angle index with the given RNG stream.
Trace synthesize_trace(const SyntheticClassSpec& spec, const SyntheticClassSpec& background,
                       std::size_t angle_index, std::uint64_t seed, const std::vector<double>& grid);

// ---------------------------------------------------------------------------
// Normalization and fingerprints

/// Subtracts the mean and divides by the sample standard deviation (n - 1).
/// Throws DataError naming block when the std is below 1e-12.
std::vector<double> normalize_block(std::span<const double> values, std::string_view block = "block");

/// Concatenates [real | imag] of the 0, 45 and 90 degree traces, each block
/// normalized. Input order does not matter.
Fingerprint build_fingerprint(std::span<const Trace> traces, int label);

/// Throws DataError unless every block has mean 0 and sample std 1 within tol.
void check_fingerprint(const Fingerprint& fp, double tol = 1e-9);

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::size_t num_classes = 0;
  std::size_t samples_per_class = 0;
  /// Three angle-ordered traces per sample, samples class-major.
  std::vector<Trace> traces;
  std::vector<Fingerprint> fingerprints;
  std::vector<Trace> background;
  /// Generator config (with seed) or a description of the source files.
  nlohmann::json provenance;

  std::size_t size() const noexcept { return fingerprints.size(); }
  std::vector<int> labels() const;
  /// Row-major size() x kFingerprintLength matrix.
  std::vector<double> feature_matrix() const;
  /// Keeps the classes with index < count, preserving order.
  Dataset first_classes(std::size_t count) const;
};

/// Pure function of the config (including its seed).
Dataset generate_dataset(const GeneratorConfig& config);

/// Traces as CSV (frequency_hz,real,imag) plus manifest.json.
void save_trace(const Trace& trace, const std::filesystem::path& file);
Trace load_trace(const std::filesystem::path& file);
void write_trace_csv(std::ostream& os, const Trace& trace);
Trace read_trace_csv(std::istream& is, const std::string& source);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& manifest);

// ---------------------------------------------------------------------------
// Signal strength

/// Pointwise complex mean of empty-scene traces.
Trace background_average(std::span<const Trace> traces);

/// |object - background| per frequency point.
std::vector<double> subtracted_magnitude(const Trace& object, const Trace& background);

struct SnrConfig {
  std::size_t signal_window = 100;
  std::size_t flat_begin = 1400;
  std::size_t flat_count = 100;
};

/// 20 log10(signal / noise) on the background-subtracted magnitude: signal is
/// the mean of signal_window points centered on the peak, noise the sample std
/// of the flat region.
double snr_db(const Trace& object, const Trace& background, const SnrConfig& config = {});
/// Same measurement on a magnitude trace.
double snr_db(std::span<const double> magnitude, const SnrConfig& config = {});

/// Trapezoidal integral of y over x.
double trapezoid(std::span<const double> x, std::span<const double> y);

struct RrcsEntry {
  int object = 0;
  int angle = 0;
  double value = 0.0;  // mean area / largest mean area
  double std = 0.0;    // sample std of the per-trace normalized areas
  std::size_t traces = 0;
};

/// Relative RCS per (object, angle), sorted by object then angle. The largest
/// entry is exactly 1.
std::vector<RrcsEntry> rrcs(std::span<const Trace> traces, const Trace& background);

struct SignalTableRow {
  int object = 0;
  int angle = 0;
  double snr_mean = 0.0;
  double snr_std = 0.0;
  double rrcs = 0.0;
  double rrcs_std = 0.0;
};

std::vector<SignalTableRow> signal_table(std::span<const Trace> traces, const Trace& background,
                                         const SnrConfig& config = {});
/// Columns: object,angle,snr_db,snr_std,rrcs,rrcs_std
void write_signal_table_csv(std::ostream& os, const std::vector<SignalTableRow>& rows);

} // namespace cmst::signal
