#pragma once

// Differentiable primitives. Every function validates shapes up front and
// throws DimensionError naming the offending shapes.

#include <span>
#include <vector>

#include "mac/tensor.hpp"

namespace mac {

/// [m x k] * [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product: [B x m x k] * [B x k x n] -> [B x m x n]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x[..., j] + bias[j]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Fully connected layer y = x W^T + b for x of shape [in] or [N x in],
/// W of shape [out x in]. `bias` may be undefined.
template <typename T>
Tensor<T> fc(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Stride-1 cross-correlation with "same" zero padding. x is [Cin x H x W] or
/// [N x Cin x H x W], kernels [Cout x Cin x kh x kw], bias [Cout] (may be
/// undefined). Padding before the first row/column is k/2, the rest goes after,
/// so even kernels pad one extra on the top/left.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias);

/// 2x2 max-pooling with stride 2 over the last two axes, trailing odd
/// row/column dropped. Gradient goes to the first maximal element (row-major).
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// max(0, x)
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Softmax along the last axis, independently for every leading index.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Slice at `index` along `axis`; the axis is removed from the result.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);

/// Sum of all elements as a [1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean binary cross-entropy over every element, evaluated from logits in the
/// stable form max(z,0) - z*y + log(1 + exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

/// Mean binary cross-entropy from probabilities clamped to [eps, 1-eps].
template <typename T>
Tensor<T> bce(const Tensor<T>& probs, std::span<const T> targets, T eps = T(1e-7));

}  // namespace mac
