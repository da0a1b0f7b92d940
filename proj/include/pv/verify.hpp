#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pv {

struct Check {
  std::string name;
  double error = 0.0;      // worst observed deviation
  double tolerance = 0.0;  // pass iff error <= tolerance
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Runs forward checks on the 64-bit implementation and divides every
  /// nonzero tolerance by ten.
  bool full_precision = false;
  std::uint64_t seed = 20240611;
};

// Suites, each returning one entry per check. Tolerances below are the
// default (32-bit) ones.

/// Central-difference gradient checks of every differentiable op, 1e-6.
std::vector<Check> gradient_suite(const VerifyOptions& options);
/// Backbone -> attention -> VLAD -> OIM on a 3x8x16x16 clip, 1e-4.
std::vector<Check> composed_gradient_suite(const VerifyOptions& options);
/// Forward layers against nested-loop references.
std::vector<Check> layer_suite(const VerifyOptions& options);
/// Soft VLAD against the hard assignment oracle, plus alpha monotonicity.
std::vector<Check> vlad_suite(const VerifyOptions& options);
/// Unit-norm descriptors everywhere and OIM probabilities summing to one.
std::vector<Check> normalization_suite(const VerifyOptions& options);
/// CMC / mAP against brute-force scoring.
std::vector<Check> metric_suite(const VerifyOptions& options);
/// Clip windows, schedule and Adam replay.
std::vector<Check> training_suite(const VerifyOptions& options);
/// OIM loss against a log-sum-exp oracle and subsampling consistency.
std::vector<Check> oim_suite(const VerifyOptions& options);

/// Every suite in order; `progress` sees each check as it completes.
std::vector<Check> run_verify(const VerifyOptions& options, const std::function<void(const Check&)>& progress = {});

std::string format_check(const Check& c);

}  // namespace pv
