#pragma once

// The full classifier: K-branch CNN -> bidirectional LSTM -> multi-attention
// pooling -> multi-label head, with every parameter registered under a
// stable name (used by the optimizer, checkpoints and gradient checks).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mac/dataset.hpp"
#include "mac/kbranch_cnn.hpp"
#include "mac/multi_attention.hpp"
#include "mac/multilabel_head.hpp"
#include "mac/spatial_birnn.hpp"

namespace mac {

struct ModelConfig {
  /// Full-image geometry of each band subset; band_names are informational.
  std::vector<SubsetShape> inputs;
  std::vector<BranchSpec> branches;
  std::size_t patches = 16;            // R
  std::size_t descriptor_width = 128;  // d_psi
  std::size_t hidden = 128;            // LSTM width per direction
  bool per_position_lstm = false;
  std::size_t attention_width = 64;  // d_a
  std::size_t attention_heads = 4;   // T
  std::size_t num_classes = 0;       // C
  double threshold = 0.5;

  /// Default architecture; `inputs` and `num_classes` come from a dataset.
  static ModelConfig defaults();

  std::size_t sequential_width() const { return 2 * hidden; }
  std::size_t patch_grid_side() const;

  /// Fills `inputs` and `num_classes` from the manifest when unset.
  void adopt_dataset(const DatasetManifest& manifest);
  /// ConfigError naming the first field that disagrees with the manifest.
  void check_dataset(const DatasetManifest& manifest) const;
  void validate() const;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> descriptors;  // psi, [B x R x d_psi]
  Tensor<T> sequential;   // phi, [B x R x 2*hidden]
  Tensor<T> attention;    // A, [B x T x R]
  Tensor<T> pooled;       // Psi^T, [B x T x 2*hidden]
  Tensor<T> logits;       // [B x C]
};

enum class InitScheme { kXavier, kZeros };

InitScheme parse_init_scheme(std::string_view name);

template <typename T>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed, InitScheme init = InitScheme::kXavier);

  const ModelConfig& config() const { return config_; }

  ForwardOutput<T> forward(std::span<const Sample* const> batch) const;
  ForwardOutput<T> forward(const Sample& sample) const;

  /// Mean binary cross-entropy of the batch from its logits.
  Tensor<T> loss(const ForwardOutput<T>& out, std::span<const Sample* const> batch) const;

  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  Tensor<T>& parameter(std::string_view name);
  std::size_t parameter_count() const;
  void zero_grad();

  const std::vector<BranchParams<T>>& branches() const { return branches_; }
  const FusionParams<T>& fusion() const { return fusion_; }
  const std::vector<LstmParams<T>>& lstm_forward() const { return lstm_fwd_; }
  const std::vector<LstmParams<T>>& lstm_backward() const { return lstm_bwd_; }
  const AttentionParams<T>& attention() const { return attention_; }
  const ClassifierParams<T>& classifier() const { return classifier_; }

 private:
  Tensor<T> add_param(const std::string& name, Shape shape, bool is_bias);
  LstmParams<T> make_lstm(const std::string& prefix, std::size_t input);

  ModelConfig config_;
  std::uint64_t seed_;
  InitScheme init_;
  std::vector<NamedParameter<T>> params_;
  std::vector<BranchParams<T>> branches_;
  FusionParams<T> fusion_;
  std::vector<LstmParams<T>> lstm_fwd_, lstm_bwd_;
  AttentionParams<T> attention_;
  ClassifierParams<T> classifier_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mac
