#pragma once

// Sample storage (MRS1 binary files), dataset manifests and the synthetic
// multi-resolution scene generator.
//
// MRS1 layout, all integers and reals little-endian:
//   "MRS1"            4 bytes magic
//   version           u16 (= 1)
//   K                 u16 number of band subsets
//   K times:
//     band_count u32, H u32, W u32
//     band_count*H*W f32 values, band-major then row-major
//   C                 u32
//   C bytes           labels, each 0 or 1

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mac/tensor.hpp"

namespace mac {

struct Sample {
  std::string id;
  std::vector<Tensorf> subsets;  // K tensors, bands x H x W
  std::vector<std::uint8_t> labels;

  std::size_t num_positive() const;
};

struct SubsetShape {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::string> band_names;

  bool operator==(const SubsetShape&) const = default;
};

struct GeneratorInfo {
  std::uint64_t seed = 0;
  std::string profile;
  double noise = 0.0;
  std::size_t n = 0;
};

struct DatasetManifest {
  std::vector<SubsetShape> subsets;
  std::vector<std::string> class_names;
  std::vector<std::string> train, val, test;
  std::optional<GeneratorInfo> generator;

  std::size_t num_subsets() const { return subsets.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  /// Ids of a named split ("train", "val" or "test"); UsageError otherwise.
  const std::vector<std::string>& split(std::string_view name) const;
  /// Checks split disjointness.
  void validate() const;
};

constexpr std::uint16_t kSampleVersion = 1;

std::vector<std::uint8_t> encode_sample(const Sample& sample);
Sample decode_sample(std::span<const std::uint8_t> bytes, std::string id = {});

void write_sample(const std::filesystem::path& path, const Sample& sample);
Sample read_sample(const std::filesystem::path& path);
/// Reads and checks K, per-subset shapes and C against the manifest.
Sample read_sample(const std::filesystem::path& path, const DatasetManifest& manifest);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& root);
std::filesystem::path sample_path(const std::filesystem::path& root, std::string_view id);

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Floors n*fraction for each split, then hands the leftover samples out one
/// at a time by largest fractional remainder (ties go train, val, test).
SplitCounts split_counts(std::size_t n, double train_frac, double val_frac, double test_frac);

struct SyntheticOptions {
  std::uint64_t seed = 42;
  std::size_t n = 64;
  std::string profile = "tiny";  // "tiny" or "bigearthnet"
  double noise = 0.1;
  std::size_t classes = 0;  // 0 = profile default (tiny: 8, bigearthnet: 43)
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  std::optional<SplitCounts> counts;  // overrides the fractions
};

/// Everything the generator draws once per dataset: per-class spectral
/// signatures over all bands and footprints on the patch grid.
struct SyntheticWorld {
  std::vector<SubsetShape> subsets;
  std::size_t grid = 4;  // cells per side; regions align to this grid
  std::vector<float> background;                 // one value per band
  std::vector<std::vector<float>> signatures;    // [class][band]
  std::vector<std::pair<std::size_t, std::size_t>> footprints;  // cells (rows, cols)

  std::size_t total_bands() const;
};

std::vector<SubsetShape> profile_subsets(std::string_view profile);
std::size_t profile_default_classes(std::string_view profile);
SyntheticWorld make_world(const SyntheticOptions& options);
/// Sample `index` of the dataset described by `options`.
Sample synthesize_sample(const SyntheticWorld& world, const SyntheticOptions& options, std::size_t index);
/// Writes samples/ and manifest.json under `root`.
DatasetManifest generate_synthetic(const std::filesystem::path& root, const SyntheticOptions& options);

/// Samples of a split in manifest order.
std::vector<Sample> load_split(const std::filesystem::path& root, const DatasetManifest& manifest,
                               std::string_view split);

/// Seeded permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

}  // namespace mac
