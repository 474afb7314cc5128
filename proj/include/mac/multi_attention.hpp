#pragma once

// Patch-based multi-attention pooling:
//   A   = softmax_rows(W2 * tanh(W1 * Omega))      T x R, rows sum to 1
//   Psi = max(0, Omega * A^T)                     d_phi x T
// where the columns of Omega are the R sequential descriptors.

#include "mac/tensor.hpp"

namespace mac {

template <typename T>
struct AttentionParams {
  Tensor<T> w1;  // [d_a x d_phi]
  Tensor<T> w2;  // [T x d_a]
};

/// Omega [d_phi x R] -> A [T x R].
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& omega, const AttentionParams<T>& params);

/// Omega [d_phi x R], A [T x R] -> Psi [d_phi x T].
template <typename T>
Tensor<T> pool_descriptors(const Tensor<T>& omega, const Tensor<T>& scores);

// Batched forms over sequential descriptors stored row-wise, Phi [B x R x d_phi]
// (Phi[b] is Omega^T of sample b). Scores come back as [B x T x R] and the
// pooled descriptor as Psi^T [B x T x d_phi], whose row-major flattening is
// the column-major vectorization of Psi.

template <typename T>
Tensor<T> attention_scores_rows(const Tensor<T>& phi, const AttentionParams<T>& params);

template <typename T>
Tensor<T> pool_descriptors_rows(const Tensor<T>& phi, const Tensor<T>& scores);

}  // namespace mac
