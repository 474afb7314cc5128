#include "mac/model.hpp"

#include <algorithm>

#include "mac/errors.hpp"
#include "mac/init.hpp"
#include "mac/ops.hpp"

namespace mac {

ModelConfig ModelConfig::defaults() {
  ModelConfig c;
  c.branches = default_branches();
  return c;
}

std::size_t ModelConfig::patch_grid_side() const { return patch_grid(patches); }

void ModelConfig::adopt_dataset(const DatasetManifest& manifest) {
  if (inputs.empty()) {
    inputs = manifest.subsets;
  }
  if (num_classes == 0) num_classes = manifest.num_classes();
}

void ModelConfig::check_dataset(const DatasetManifest& manifest) const {
  if (inputs.size() != manifest.num_subsets())
    throw ConfigError("model.inputs: model has " + std::to_string(inputs.size()) + " band subsets, dataset has " +
                      std::to_string(manifest.num_subsets()));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& a = inputs[k];
    const auto& b = manifest.subsets[k];
    if (a.bands != b.bands || a.height != b.height || a.width != b.width)
      throw ConfigError("model.inputs[" + std::to_string(k) + "]: model expects " +
                        shape_str({a.bands, a.height, a.width}) + ", dataset has " +
                        shape_str({b.bands, b.height, b.width}));
  }
  if (num_classes != manifest.num_classes())
    throw ConfigError("model.num_classes: model has " + std::to_string(num_classes) + ", dataset has " +
                      std::to_string(manifest.num_classes()));
}

void ModelConfig::validate() const {
  if (branches.empty()) throw ConfigError("model.branches: need at least one branch");
  if (inputs.size() != branches.size())
    throw ConfigError("model.inputs: " + std::to_string(inputs.size()) + " input subsets for " +
                      std::to_string(branches.size()) + " branches");
  const std::size_t grid = patch_grid(patches);
  for (std::size_t k = 0; k < branches.size(); ++k) {
    const auto& b = branches[k];
    const auto tag = "model.branches[" + std::to_string(k) + "]";
    if (b.in_channels() != inputs[k].bands)
      throw ConfigError(tag + ".band_indices: " + std::to_string(b.in_channels()) + " bands, input subset has " +
                        std::to_string(inputs[k].bands));
    for (const auto& l : b.layers)
      if (l.kernel == 0) throw ConfigError(tag + ": kernel size must be positive");
    if (b.fc_out == 0) throw ConfigError(tag + ".fc_out must be positive");
    check_filter_regime(b);
    if (inputs[k].height % grid || inputs[k].width % grid)
      throw ConfigError("model.patches: " + std::to_string(patches) + " patches do not tile subset " +
                        std::to_string(k) + " of size " + std::to_string(inputs[k].height) + "x" +
                        std::to_string(inputs[k].width));
    branch_output_geometry(b, inputs[k].height / grid, inputs[k].width / grid);
  }
  if (descriptor_width == 0) throw ConfigError("model.descriptor_width must be positive");
  if (hidden == 0) throw ConfigError("model.hidden must be positive");
  if (attention_width == 0) throw ConfigError("model.attention_width must be positive");
  if (attention_heads == 0) throw ConfigError("model.attention_heads must be positive");
  if (num_classes == 0) throw ConfigError("model.num_classes must be positive");
  check_threshold(threshold);
}

InitScheme parse_init_scheme(std::string_view name) {
  if (name == "xavier") return InitScheme::kXavier;
  if (name == "zeros") return InitScheme::kZeros;
  throw ConfigError("unknown init scheme '" + std::string(name) + "' (expected xavier or zeros)");
}

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed, InitScheme init)
    : config_(std::move(config)), seed_(seed), init_(init) {
  config_.validate();
  const std::size_t grid = config_.patch_grid_side();
  for (std::size_t k = 0; k < config_.branches.size(); ++k) {
    const auto& spec = config_.branches[k];
    const auto prefix = "branch" + std::to_string(k);
    BranchParams<T> bp;
    std::size_t in = spec.in_channels();
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      const auto& layer = spec.layers[l];
      const auto name = prefix + ".conv" + std::to_string(l);
      bp.convs.push_back({add_param(name + ".kernel", {layer.filters, in, layer.kernel, layer.kernel}, false),
                          add_param(name + ".bias", {layer.filters}, true)});
      in = layer.filters;
    }
    const auto geo = branch_output_geometry(spec, config_.inputs[k].height / grid, config_.inputs[k].width / grid);
    bp.fc_weight = add_param(prefix + ".fc.weight", {spec.fc_out, geo.numel()}, false);
    bp.fc_bias = add_param(prefix + ".fc.bias", {spec.fc_out}, true);
    branches_.push_back(std::move(bp));
  }
  std::size_t fused = 0;
  for (const auto& b : config_.branches) fused += b.fc_out;
  fusion_.weight = add_param("fusion.weight", {config_.descriptor_width, fused}, false);
  fusion_.bias = add_param("fusion.bias", {config_.descriptor_width}, true);

  const std::size_t sets = config_.per_position_lstm ? config_.patches : 1;
  for (std::size_t r = 0; r < sets; ++r) {
    const auto suffix = config_.per_position_lstm ? "." + std::to_string(r) : std::string{};
    lstm_fwd_.push_back(make_lstm("lstm_fwd" + suffix, config_.descriptor_width));
  }
  for (std::size_t r = 0; r < sets; ++r) {
    const auto suffix = config_.per_position_lstm ? "." + std::to_string(r) : std::string{};
    lstm_bwd_.push_back(make_lstm("lstm_bwd" + suffix, config_.descriptor_width));
  }
  const std::size_t d_phi = config_.sequential_width();
  attention_.w1 = add_param("attention.W1", {config_.attention_width, d_phi}, false);
  attention_.w2 = add_param("attention.W2", {config_.attention_heads, config_.attention_width}, false);
  classifier_.weight = add_param("classifier.weight", {config_.num_classes, d_phi * config_.attention_heads}, false);
  classifier_.bias = add_param("classifier.bias", {config_.num_classes}, true);
}

template <typename T>
Tensor<T> Model<T>::add_param(const std::string& name, Shape shape, bool is_bias) {
  Tensor<T> t = (is_bias || init_ == InitScheme::kZeros) ? Tensor<T>::zeros(shape, true)
                                                         : xavier_init<T>(shape, seed_, name);
  params_.push_back({name, t});
  return t;
}

template <typename T>
LstmParams<T> Model<T>::make_lstm(const std::string& prefix, std::size_t input) {
  const std::size_t h = config_.hidden;
  LstmParams<T> p;
  p.w_f = add_param(prefix + ".W_f", {h, input}, false);
  p.w_i = add_param(prefix + ".W_i", {h, input}, false);
  p.w_o = add_param(prefix + ".W_o", {h, input}, false);
  p.w_c = add_param(prefix + ".W_c", {h, input}, false);
  p.u_f = add_param(prefix + ".U_f", {h, h}, false);
  p.u_i = add_param(prefix + ".U_i", {h, h}, false);
  p.u_o = add_param(prefix + ".U_o", {h, h}, false);
  p.u_c = add_param(prefix + ".U_c", {h, h}, false);
  p.b_f = add_param(prefix + ".b_f", {h}, true);
  p.b_i = add_param(prefix + ".b_i", {h}, true);
  p.b_o = add_param(prefix + ".b_o", {h}, true);
  p.b_c = add_param(prefix + ".b_c", {h}, true);
  return p;
}

template <typename T>
Tensor<T>& Model<T>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw UsageError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
ForwardOutput<T> Model<T>::forward(std::span<const Sample* const> batch) const {
  if (batch.empty()) throw UsageError("forward: empty batch");
  const std::size_t b = batch.size(), r = config_.patches;
  for (const Sample* s : batch) {
    if (s->subsets.size() != config_.inputs.size())
      throw DimensionError("sample " + s->id + " has " + std::to_string(s->subsets.size()) + " subsets, model expects " +
                           std::to_string(config_.inputs.size()));
    for (std::size_t k = 0; k < s->subsets.size(); ++k) {
      const auto& in = config_.inputs[k];
      if (s->subsets[k].shape() != Shape{in.bands, in.height, in.width})
        throw DimensionError("sample " + s->id + " subset " + std::to_string(k) + " is " +
                             shape_str(s->subsets[k].shape()) + ", model expects " +
                             shape_str({in.bands, in.height, in.width}));
    }
  }

  std::vector<Tensor<T>> branch_out;
  for (std::size_t k = 0; k < branches_.size(); ++k)
    branch_out.push_back(branch_forward(gather_patches<T>(batch, k, r), config_.branches[k], branches_[k]));
  const auto psi_rows = fuse_descriptors(branch_out, fusion_);  // [B*R x d_psi]
  ForwardOutput<T> out;
  out.descriptors = reshape(psi_rows, {b, r, config_.descriptor_width});

  std::vector<Tensor<T>> sequence;
  sequence.reserve(r);
  for (std::size_t i = 0; i < r; ++i) sequence.push_back(select(out.descriptors, 1, i));
  const auto phi = bidirectional_pass(sequence, lstm_fwd_, lstm_bwd_);
  const std::size_t d_phi = config_.sequential_width();
  std::vector<Tensor<T>> rows;
  rows.reserve(r);
  for (const auto& p : phi) rows.push_back(reshape(p, {b, 1, d_phi}));
  out.sequential = concat(rows, 1);

  out.attention = attention_scores_rows(out.sequential, attention_);
  out.pooled = pool_descriptors_rows(out.sequential, out.attention);
  out.logits = classify_rows(out.pooled, classifier_);
  return out;
}

template <typename T>
ForwardOutput<T> Model<T>::forward(const Sample& sample) const {
  const Sample* one[] = {&sample};
  return forward(std::span<const Sample* const>(one));
}

template <typename T>
Tensor<T> Model<T>::loss(const ForwardOutput<T>& out, std::span<const Sample* const> batch) const {
  std::vector<std::uint8_t> labels;
  labels.reserve(batch.size() * config_.num_classes);
  for (const Sample* s : batch) {
    if (s->labels.size() != config_.num_classes)
      throw DimensionError("sample " + s->id + " has " + std::to_string(s->labels.size()) + " labels, model has " +
                           std::to_string(config_.num_classes) + " classes");
    labels.insert(labels.end(), s->labels.begin(), s->labels.end());
  }
  return bce_loss_logits(out.logits, std::span<const std::uint8_t>(labels));
}

template class Model<float>;
template class Model<double>;

}  // namespace mac
