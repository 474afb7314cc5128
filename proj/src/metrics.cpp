#include "mac/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "mac/errors.hpp"

namespace mac {

double f_beta(double precision, double recall, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  return denom > 0 ? (1 + b2) * precision * recall / denom : 0.0;
}

SampleMetrics example_metrics(std::span<const std::uint8_t> y_true, std::span<const std::uint8_t> y_pred) {
  if (y_true.size() != y_pred.size())
    throw DimensionError("example_metrics: " + std::to_string(y_true.size()) + " true labels vs " +
                         std::to_string(y_pred.size()) + " predicted");
  std::size_t tp = 0, n_true = 0, n_pred = 0;
  for (std::size_t j = 0; j < y_true.size(); ++j) {
    n_true += y_true[j] != 0;
    n_pred += y_pred[j] != 0;
    tp += y_true[j] != 0 && y_pred[j] != 0;
  }
  if (n_true == 0 && n_pred == 0) return {1, 1, 1, 1};
  SampleMetrics m;
  m.precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  m.recall = n_true ? static_cast<double>(tp) / static_cast<double>(n_true) : 0.0;
  m.f1 = f_beta(m.precision, m.recall, 1.0);
  m.f2 = f_beta(m.precision, m.recall, 2.0);
  return m;
}

MetricsReport aggregate(std::span<const SampleMetrics> samples, bool keep_per_sample) {
  if (samples.empty()) throw UsageError("aggregate: no samples");
  MetricsReport r;
  for (const auto& s : samples) {
    r.precision += s.precision;
    r.recall += s.recall;
    r.f1 += s.f1;
    r.f2 += s.f2;
  }
  const auto n = static_cast<double>(samples.size());
  r.precision /= n;
  r.recall /= n;
  r.f1 /= n;
  r.f2 /= n;
  r.n_samples = samples.size();
  if (keep_per_sample) r.per_sample.assign(samples.begin(), samples.end());
  return r;
}

std::string format_key_values(const MetricsReport& report) {
  std::ostringstream os;
  char buf[64];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    os << key << '=' << buf << '\n';
  };
  os << "n_samples=" << report.n_samples << '\n';
  line("precision", report.precision);
  line("recall", report.recall);
  line("f1", report.f1);
  line("f2", report.f2);
  return os.str();
}

}  // namespace mac
