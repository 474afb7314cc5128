#pragma once

// Central finite-difference checks of analytic gradients at 64-bit.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mac/model.hpp"

namespace mac {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so gradients that are zero up
  /// to rounding compare on absolute error instead.
  double floor = 1e-6;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0, numeric = 0;  // at worst_index
};

struct GradcheckReport {
  std::string label;
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0;
  bool passed = false;
};

/// Compares d(loss)/d(input) for every element of every input. `loss` must
/// rebuild the graph from the inputs' current values on each call.
GradcheckReport gradcheck(const std::string& label, const std::function<Tensor<double>()>& loss,
                          std::vector<NamedParameter<double>> inputs, const GradcheckOptions& options = {});

/// Small end-to-end architecture: R=4, d_psi=6, hidden=5, T=2, d_a=3, C=3,
/// filter regime 2-4-8-4, largest patches 6x6.
ModelConfig gradcheck_model_config();

/// Random samples (normal pixels, at least one positive label) for a config.
std::vector<Sample> random_samples(const ModelConfig& config, std::size_t n, std::uint64_t seed);

/// Every parameter of the full loss on two random samples.
GradcheckReport gradcheck_model(const ModelConfig& config, std::uint64_t seed, const GradcheckOptions& options = {});

/// Separate checks for conv, pool, FC, matmul, softmax, LSTM cell,
/// bidirectional pass, attention and the losses.
std::vector<GradcheckReport> module_gradchecks(std::uint64_t seed, const GradcheckOptions& options = {});

std::string format_report(const GradcheckReport& report);

}  // namespace mac
