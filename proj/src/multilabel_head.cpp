#include "mac/multilabel_head.hpp"

#include <string>

#include "mac/errors.hpp"
#include "mac/ops.hpp"

namespace mac {

namespace {

template <typename T>
std::vector<T> as_targets(std::span<const std::uint8_t> labels) {
  return {labels.begin(), labels.end()};
}

}  // namespace

template <typename T>
Tensor<T> classify(const Tensor<T>& psi, const ClassifierParams<T>& params) {
  if (psi.rank() != 2) throw DimensionError("classify: Psi must be d_phi x T, got " + shape_str(psi.shape()));
  const auto flat = reshape(transpose(psi), {psi.numel()});
  if (params.weight.rank() != 2 || params.weight.dim(1) != flat.numel())
    throw DimensionError("classify: weight " + shape_str(params.weight.shape()) + " for descriptor " +
                         shape_str(psi.shape()));
  return fc(flat, params.weight, params.bias);
}

template <typename T>
Tensor<T> classify_rows(const Tensor<T>& psi_t, const ClassifierParams<T>& params) {
  if (psi_t.rank() != 3) throw DimensionError("classify_rows: expected [B x T x d], got " + shape_str(psi_t.shape()));
  const std::size_t batch = psi_t.dim(0), width = psi_t.dim(1) * psi_t.dim(2);
  if (params.weight.rank() != 2 || params.weight.dim(1) != width)
    throw DimensionError("classify_rows: weight " + shape_str(params.weight.shape()) + " for descriptor " +
                         shape_str(psi_t.shape()));
  return fc(reshape(psi_t, {batch, width}), params.weight, params.bias);
}

template <typename T>
Tensor<T> posteriors(const Tensor<T>& logits) {
  return sigmoid(logits);
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels, T eps) {
  const auto y = as_targets<T>(labels);
  return bce(probs, std::span<const T>(y), eps);
}

template <typename T>
Tensor<T> bce_loss_logits(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  const auto y = as_targets<T>(labels);
  return bce_with_logits(logits, std::span<const T>(y));
}

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
}

template <typename T>
std::vector<std::uint8_t> predict(std::span<const T> probs, double threshold) {
  check_threshold(threshold);
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) out[j] = static_cast<double>(probs[j]) >= threshold ? 1 : 0;
  return out;
}

#define MAC_INSTANTIATE_HEAD(T)                                                             \
  template Tensor<T> classify(const Tensor<T>&, const ClassifierParams<T>&);                \
  template Tensor<T> classify_rows(const Tensor<T>&, const ClassifierParams<T>&);           \
  template Tensor<T> posteriors(const Tensor<T>&);                                          \
  template Tensor<T> bce_loss(const Tensor<T>&, std::span<const std::uint8_t>, T);          \
  template Tensor<T> bce_loss_logits(const Tensor<T>&, std::span<const std::uint8_t>);      \
  template std::vector<std::uint8_t> predict(std::span<const T>, double);

MAC_INSTANTIATE_HEAD(float)
MAC_INSTANTIATE_HEAD(double)

}  // namespace mac
