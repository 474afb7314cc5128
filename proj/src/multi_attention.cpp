#include "mac/multi_attention.hpp"

#include "mac/errors.hpp"
#include "mac/ops.hpp"

namespace mac {

template <typename T>
Tensor<T> attention_scores_rows(const Tensor<T>& phi, const AttentionParams<T>& params) {
  if (phi.rank() != 3 || params.w1.rank() != 2 || params.w2.rank() != 2 || params.w1.dim(1) != phi.dim(2) ||
      params.w2.dim(1) != params.w1.dim(0))
    throw DimensionError("attention: descriptors " + shape_str(phi.shape()) + ", W1 " +
                         shape_str(params.w1.shape()) + ", W2 " + shape_str(params.w2.shape()));
  const std::size_t batch = phi.dim(0), patches = phi.dim(1), width = phi.dim(2);
  const std::size_t heads = params.w2.dim(0);
  const auto rows = reshape(phi, {batch * patches, width});
  const auto hidden = tanh(fc(rows, params.w1, Tensor<T>{}));
  const auto logits = fc(hidden, params.w2, Tensor<T>{});  // [B*R x T]
  return softmax_rows(transpose(reshape(logits, {batch, patches, heads})));
}

template <typename T>
Tensor<T> pool_descriptors_rows(const Tensor<T>& phi, const Tensor<T>& scores) {
  if (phi.rank() != 3 || scores.rank() != 3 || phi.dim(0) != scores.dim(0) || phi.dim(1) != scores.dim(2))
    throw DimensionError("pool_descriptors: descriptors " + shape_str(phi.shape()) + ", scores " +
                         shape_str(scores.shape()));
  return relu(bmm(scores, phi));
}

template <typename T>
Tensor<T> attention_scores(const Tensor<T>& omega, const AttentionParams<T>& params) {
  if (omega.rank() != 2) throw DimensionError("attention_scores: Omega must be d_phi x R, got " + shape_str(omega.shape()));
  const auto phi = reshape(transpose(omega), {1, omega.dim(1), omega.dim(0)});
  const auto a = attention_scores_rows(phi, params);
  return reshape(a, {a.dim(1), a.dim(2)});
}

template <typename T>
Tensor<T> pool_descriptors(const Tensor<T>& omega, const Tensor<T>& scores) {
  if (omega.rank() != 2 || scores.rank() != 2)
    throw DimensionError("pool_descriptors: Omega " + shape_str(omega.shape()) + ", A " + shape_str(scores.shape()));
  const auto phi = reshape(transpose(omega), {1, omega.dim(1), omega.dim(0)});
  const auto a = reshape(scores, {1, scores.dim(0), scores.dim(1)});
  const auto psi_t = pool_descriptors_rows(phi, a);
  return transpose(reshape(psi_t, {psi_t.dim(1), psi_t.dim(2)}));
}

#define MAC_INSTANTIATE_ATTENTION(T)                                                       \
  template Tensor<T> attention_scores(const Tensor<T>&, const AttentionParams<T>&);        \
  template Tensor<T> pool_descriptors(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> attention_scores_rows(const Tensor<T>&, const AttentionParams<T>&);   \
  template Tensor<T> pool_descriptors_rows(const Tensor<T>&, const Tensor<T>&);

MAC_INSTANTIATE_ATTENTION(float)
MAC_INSTANTIATE_ATTENTION(double)

}  // namespace mac
