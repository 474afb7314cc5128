#include "mac/kbranch_cnn.hpp"

#include <algorithm>
#include <cmath>

#include "mac/errors.hpp"
#include "mac/ops.hpp"

namespace mac {

void check_filter_regime(const BranchSpec& spec) {
  const auto& layers = spec.layers;
  if (layers.size() < 2) throw ConfigError("branch needs at least two conv layers");
  const std::size_t base = layers.front().filters;
  if (base == 0) throw ConfigError("branch filter count must be positive");
  std::size_t i = 1;
  bool rose = false;
  while (i < layers.size() && layers[i].filters == 2 * layers[i - 1].filters) ++i, rose = true;
  while (i < layers.size() && layers[i].filters * 2 == layers[i - 1].filters) ++i;
  if (!rose || i != layers.size() || layers.back().filters != 2 * base)
    throw ConfigError("branch filter counts must double from " + std::to_string(base) +
                      ", then halve, ending at " + std::to_string(2 * base));
}

std::vector<BranchSpec> default_branches() {
  const auto make = [](std::vector<std::string> bands, std::size_t k1, std::size_t k, bool pool1, bool pool2) {
    BranchSpec b;
    b.band_indices = std::move(bands);
    b.layers = {{k1, 32, pool1}, {k, 64, pool2}, {k, 128, false}, {k, 64, false}};
    b.fc_out = 128;
    return b;
  };
  return {make({"B02", "B03", "B04", "B08"}, 5, 3, true, true),
          make({"B05", "B06", "B07", "B8A", "B11", "B12"}, 3, 3, true, false),
          make({"B01", "B09"}, 2, 2, false, false)};
}

FeatureGeometry branch_output_geometry(const BranchSpec& spec, std::size_t height, std::size_t width) {
  FeatureGeometry g{spec.in_channels(), height, width};
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    g.channels = spec.layers[l].filters;
    if (spec.layers[l].pool) {
      if (g.height < 2 || g.width < 2)
        throw ConfigError("pooling after conv layer " + std::to_string(l + 1) + " would reduce a " +
                          std::to_string(g.height) + "x" + std::to_string(g.width) + " map to nothing");
      g.height /= 2;
      g.width /= 2;
    }
  }
  return g;
}

std::size_t patch_grid(std::size_t patches) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  if (patches == 0 || side * side != patches)
    throw ConfigError("patch count " + std::to_string(patches) + " is not a perfect square");
  return side;
}

namespace {

template <typename T>
void copy_patch(const Tensorf& image, std::size_t grid, std::size_t r, T* dst) {
  const std::size_t bands = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t ph = h / grid, pw = w / grid;
  const std::size_t row0 = (r / grid) * ph, col0 = (r % grid) * pw;
  auto src = image.data();
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        *dst++ = static_cast<T>(src[(b * h + row0 + y) * w + col0 + x]);
}

void check_divisible(const Tensorf& image, std::size_t grid, std::size_t k) {
  if (image.rank() != 3) throw DimensionError("band subset must be bands x H x W, got " + shape_str(image.shape()));
  if (image.dim(1) % grid || image.dim(2) % grid)
    throw ConfigError("subset " + std::to_string(k) + " of size " + shape_str(image.shape()) +
                      " cannot be tiled by a " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");
}

}  // namespace

PatchSet split_patches(const Sample& sample, std::size_t patches) {
  PatchSet set;
  set.grid = patch_grid(patches);
  for (std::size_t k = 0; k < sample.subsets.size(); ++k) check_divisible(sample.subsets[k], set.grid, k);
  set.patches.resize(patches);
  for (std::size_t r = 0; r < patches; ++r) {
    for (const auto& image : sample.subsets) {
      const std::size_t ph = image.dim(1) / set.grid, pw = image.dim(2) / set.grid;
      std::vector<float> values(image.dim(0) * ph * pw);
      copy_patch(image, set.grid, r, values.data());
      set.patches[r].push_back(Tensorf::from({image.dim(0), ph, pw}, std::move(values)));
    }
  }
  return set;
}

std::vector<Tensorf> stitch_patches(const PatchSet& set) {
  if (set.patches.empty()) throw UsageError("stitch_patches: empty patch set");
  std::vector<Tensorf> images;
  const std::size_t g = set.grid;
  for (std::size_t k = 0; k < set.patches.front().size(); ++k) {
    const auto& first = set.patches.front()[k];
    const std::size_t bands = first.dim(0), ph = first.dim(1), pw = first.dim(2);
    const std::size_t h = ph * g, w = pw * g;
    std::vector<float> values(bands * h * w);
    for (std::size_t r = 0; r < set.patches.size(); ++r) {
      auto src = set.patches[r][k].data();
      const std::size_t row0 = (r / g) * ph, col0 = (r % g) * pw;
      for (std::size_t b = 0; b < bands; ++b)
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x)
            values[(b * h + row0 + y) * w + col0 + x] = src[(b * ph + y) * pw + x];
    }
    images.push_back(Tensorf::from({bands, h, w}, std::move(values)));
  }
  return images;
}

template <typename T>
Tensor<T> gather_patches(std::span<const Sample* const> batch, std::size_t k, std::size_t patches) {
  if (batch.empty()) throw UsageError("gather_patches: empty batch");
  const std::size_t grid = patch_grid(patches);
  const Shape& shape = batch.front()->subsets.at(k).shape();
  for (const Sample* s : batch) {
    if (s->subsets.size() <= k || s->subsets[k].shape() != shape)
      throw DimensionError("gather_patches: sample " + s->id + " subset " + std::to_string(k) +
                           " does not match " + shape_str(shape));
  }
  check_divisible(batch.front()->subsets[k], grid, k);
  const std::size_t bands = shape[0], ph = shape[1] / grid, pw = shape[2] / grid;
  const std::size_t per_patch = bands * ph * pw;
  std::vector<T> values(batch.size() * patches * per_patch);
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t r = 0; r < patches; ++r)
      copy_patch(batch[b]->subsets[k], grid, r, values.data() + (b * patches + r) * per_patch);
  return Tensor<T>::from({batch.size() * patches, bands, ph, pw}, std::move(values));
}

template <typename T>
Tensor<T> branch_forward(const Tensor<T>& x, const BranchSpec& spec, const BranchParams<T>& params) {
  if (x.rank() != 3 && x.rank() != 4) throw DimensionError("branch input must be rank 3 or 4, got " + shape_str(x.shape()));
  const std::size_t channels = x.dim(x.rank() - 3);
  if (channels != spec.in_channels())
    throw DimensionError("branch expects " + std::to_string(spec.in_channels()) + " bands, patch has " +
                         std::to_string(channels));
  if (params.convs.size() != spec.layers.size()) throw InternalError("branch parameter count mismatch");
  // Validates pooling geometry before any work.
  branch_output_geometry(spec, x.dim(x.rank() - 2), x.dim(x.rank() - 1));

  Tensor<T> h = x;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    h = relu(conv2d(h, params.convs[l].kernel, params.convs[l].bias));
    if (spec.layers[l].pool) h = maxpool2(h);
  }
  const bool batched = h.rank() == 4;
  const std::size_t flat = h.numel() / (batched ? h.dim(0) : 1);
  h = batched ? reshape(h, {h.dim(0), flat}) : reshape(h, {flat});
  return relu(fc(h, params.fc_weight, params.fc_bias));
}

template <typename T>
Tensor<T> fuse_descriptors(const std::vector<Tensor<T>>& branch_outputs, const FusionParams<T>& params) {
  if (branch_outputs.empty()) throw InternalError("fuse_descriptors: no branch outputs");
  const std::size_t in = params.weight.dim(1);
  std::size_t width = 0;
  for (const auto& b : branch_outputs) {
    if (!b.defined()) throw InternalError("fuse_descriptors: missing branch output");
    width += b.dim(b.rank() - 1);
  }
  if (width != in)
    throw InternalError("fuse_descriptors: branch outputs total " + std::to_string(width) +
                        " features, fusion layer expects " + std::to_string(in));
  const std::size_t axis = branch_outputs.front().rank() - 1;
  return fc(concat(branch_outputs, axis), params.weight, params.bias);
}

template Tensor<float> gather_patches<float>(std::span<const Sample* const>, std::size_t, std::size_t);
template Tensor<double> gather_patches<double>(std::span<const Sample* const>, std::size_t, std::size_t);
template Tensor<float> branch_forward(const Tensor<float>&, const BranchSpec&, const BranchParams<float>&);
template Tensor<double> branch_forward(const Tensor<double>&, const BranchSpec&, const BranchParams<double>&);
template Tensor<float> fuse_descriptors(const std::vector<Tensor<float>>&, const FusionParams<float>&);
template Tensor<double> fuse_descriptors(const std::vector<Tensor<double>>&, const FusionParams<double>&);

}  // namespace mac
