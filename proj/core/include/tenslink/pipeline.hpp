#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tenslink/synth.hpp"
#include "tenslink/tensor.hpp"

namespace tenslink {

/// One benchmark/run record: the method name, the echoed parameters, and the
/// resulting metrics.  Serialization is canonical — keys sorted, doubles
/// printed with 17 significant digits — so reruns of a deterministic method
/// with the same seed produce byte-identical output.  The measured wall-clock
/// time is deliberately excluded from every serialized form.
struct MetricsReport {
  std::string method;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> parameters;
  std::map<std::string, double> metrics;
  double wall_seconds = 0.0;  // informational only; never serialized

  /// Line-delimited record: method, seed, then param.* and metric.* lines in
  /// key order, terminated by one blank line.
  std::string canonical_text() const;
};

/// Shortest-stable formatting used by every serializer ("%.17g").
std::string format_double(double value);

/// Concatenated canonical_text of all rows.
std::string reports_to_text(const std::vector<MetricsReport>& rows);

/// One CSV table: header "method,seed,<param.* keys>,<metric.* keys>" over the
/// sorted union of keys, one row per report, empty cells for missing keys.
std::string reports_to_csv(const std::vector<MetricsReport>& rows);

/// Rows as a JSON-lines document (one compact, key-sorted object per line).
std::string reports_to_json(const std::vector<MetricsReport>& rows);

struct SsvepBenchOptions {
  /// Analysis window lengths in seconds; each must fit inside the trials.
  std::vector<double> windows_seconds = {1.0, 2.0, 4.0};
  /// Reference methods to evaluate: "cca" (plain sine/cosine references),
  /// "mcca" (consensus scores of the training trials), "cifa" (common basis
  /// extracted from the training trials).
  std::vector<std::string> methods = {"cca", "mcca", "cifa"};
  /// Sine/cosine pairs in the plain-reference baseline.
  std::size_t reference_harmonics = 1;
  /// Shared components extracted by the learned-reference methods.
  std::size_t common_components = 4;
};

/// Leave-one-trial-out stimulation-frequency recognition.  classes[k] is the
/// channel x samples x trials tensor recorded under frequencies[k]; every
/// held-out trial is classified by the maximal first canonical correlation
/// between its window and each class's reference matrix.  Returns one report
/// per (method, window) with the echoed setup and an "accuracy" metric.
std::vector<MetricsReport> ssvep_bench(const std::vector<DenseTensor>& classes,
                                       const std::vector<double>& frequencies,
                                       double sample_rate,
                                       std::uint64_t seed,
                                       const SsvepBenchOptions& options = {});

/// synth_ssvep followed by ssvep_bench on the generated classes.
std::vector<MetricsReport> ssvep_bench(const SsvepConfig& config,
                                       const SsvepBenchOptions& options = {});

struct CompletionBenchOptions {
  /// Rank for the factorization-based methods.
  std::size_t rank = 2;
  /// Initial rank for the rank-adaptive method.
  std::size_t rank_init = 8;
  /// Shrinkage level for the matrix route as a multiple of the observed
  /// Frobenius norm (order-2 inputs only).
  double tau_scale = 20.0;
  std::size_t soft_impute_max_iter = 20000;
};

/// Runs each named completion method ("halrtc", "cp_wopt", "cp_rank_adapt",
/// "soft_impute") on the same masked tensor and emits one report row per
/// method: observed fraction, iterations, convergence flag, and — when the
/// ground truth is supplied — the relative error and the peak signal-to-noise
/// ratio against it.  Returns the completed tensors alongside the rows.
struct CompletionBenchResult {
  std::vector<MetricsReport> reports;
  std::vector<DenseTensor> completed;  // aligned with reports
};
CompletionBenchResult completion_bench(const MaskedTensor& y,
                                       const std::vector<std::string>& methods,
                                       const DenseTensor* truth = nullptr,
                                       const CompletionBenchOptions& options = {});

}  // namespace tenslink
