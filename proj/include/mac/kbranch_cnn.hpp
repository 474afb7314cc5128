#pragma once

// K-branch CNN: each band subset of a patch goes through its own stack of
// convolutions and one FC layer; the K branch outputs are concatenated and a
// shared fusion FC produces the patch's local descriptor.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mac/dataset.hpp"
#include "mac/tensor.hpp"

namespace mac {

struct ConvLayerSpec {
  std::size_t kernel = 3;
  std::size_t filters = 32;
  bool pool = false;  // 2x2 max-pool after the activation

  bool operator==(const ConvLayerSpec&) const = default;
};

struct BranchSpec {
  std::vector<std::string> band_indices;
  std::vector<ConvLayerSpec> layers;
  std::size_t fc_out = 128;

  std::size_t in_channels() const { return band_indices.size(); }
  bool operator==(const BranchSpec&) const = default;
};

/// Filter counts start at f, double up to a peak, halve afterwards and end
/// at 2f (32, 64, 128, 64 for f = 32). Throws ConfigError otherwise.
void check_filter_regime(const BranchSpec& spec);

/// Default three-branch layout for 10 m, 20 m and 60 m band groups.
std::vector<BranchSpec> default_branches();

struct FeatureGeometry {
  std::size_t channels, height, width;
  std::size_t numel() const { return channels * height * width; }
};

/// Shape after the convolution stack for a patch of the given size.
/// ConfigError if pooling would shrink a side below 1.
FeatureGeometry branch_output_geometry(const BranchSpec& spec, std::size_t height, std::size_t width);

template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // [filters x in x k x k]
  Tensor<T> bias;    // [filters]
};

template <typename T>
struct BranchParams {
  std::vector<ConvParams<T>> convs;
  Tensor<T> fc_weight;  // [fc_out x flattened conv output]
  Tensor<T> fc_bias;
};

template <typename T>
struct FusionParams {
  Tensor<T> weight;  // [d_psi x K*fc_out]
  Tensor<T> bias;
};

/// Patch tensors indexed [r][k]; r runs row-major over the grid.
struct PatchSet {
  std::size_t grid = 1;
  std::vector<std::vector<Tensorf>> patches;

  std::size_t size() const { return patches.size(); }
};

/// Side length of the patch grid; ConfigError unless `patches` is a perfect square.
std::size_t patch_grid(std::size_t patches);

PatchSet split_patches(const Sample& sample, std::size_t patches);

/// Inverse of split_patches.
std::vector<Tensorf> stitch_patches(const PatchSet& set);

/// Subset k of every patch of every sample, stacked as [B*R x bands x h x w]
/// in (sample, patch) order.
template <typename T>
Tensor<T> gather_patches(std::span<const Sample* const> batch, std::size_t k, std::size_t patches);

/// Convolutions (ReLU after each, pooling where flagged) then a ReLU FC layer.
/// `x` is [bands x h x w] or [N x bands x h x w]; returns [fc_out] or [N x fc_out].
template <typename T>
Tensor<T> branch_forward(const Tensor<T>& x, const BranchSpec& spec, const BranchParams<T>& params);

/// Concatenates the K branch outputs and applies the linear fusion layer.
template <typename T>
Tensor<T> fuse_descriptors(const std::vector<Tensor<T>>& branch_outputs, const FusionParams<T>& params);

}  // namespace mac
