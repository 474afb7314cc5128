#pragma once

// Example-based multi-label metrics: precision, recall and F-beta are computed
// per sample from the true and predicted label sets, then averaged.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mac {

struct SampleMetrics {
  double precision = 0, recall = 0, f1 = 0, f2 = 0;
};

struct MetricsReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double f2 = 0;
  std::size_t n_samples = 0;
  std::vector<SampleMetrics> per_sample;
};

/// F-beta from precision and recall; 0 when both are 0.
double f_beta(double precision, double recall, double beta);

/// Empty predicted set with a non-empty true set scores 0 everywhere; both
/// empty scores 1 everywhere.
SampleMetrics example_metrics(std::span<const std::uint8_t> y_true, std::span<const std::uint8_t> y_pred);

/// Arithmetic means in sample order. UsageError on an empty list.
MetricsReport aggregate(std::span<const SampleMetrics> samples, bool keep_per_sample = false);

/// "key=value" lines: n_samples, precision, recall, f1, f2.
std::string format_key_values(const MetricsReport& report);

}  // namespace mac
