#pragma once

// Classification layer on the vectorized image descriptor, sigmoid
// posteriors, binary cross-entropy and threshold prediction.

#include <cstdint>
#include <span>
#include <vector>

#include "mac/tensor.hpp"

namespace mac {

template <typename T>
struct ClassifierParams {
  Tensor<T> weight;  // [C x d_phi*T]
  Tensor<T> bias;    // [C]
};

/// z = W vec(Psi) + b for Psi [d_phi x T], vec stacking columns.
template <typename T>
Tensor<T> classify(const Tensor<T>& psi, const ClassifierParams<T>& params);

/// Batched form on Psi^T [B x T x d_phi]; returns [B x C].
template <typename T>
Tensor<T> classify_rows(const Tensor<T>& psi_t, const ClassifierParams<T>& params);

template <typename T>
Tensor<T> posteriors(const Tensor<T>& logits);

/// Mean over classes (and samples) of the clamped binary cross-entropy.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels, T eps = T(1e-7));

/// Same loss evaluated from logits in the numerically stable form.
template <typename T>
Tensor<T> bce_loss_logits(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// y_j = 1 iff P_j >= threshold. ConfigError unless threshold is in (0, 1).
template <typename T>
std::vector<std::uint8_t> predict(std::span<const T> probs, double threshold);

void check_threshold(double threshold);

}  // namespace mac
