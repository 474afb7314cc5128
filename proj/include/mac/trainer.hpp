#pragma once

// Optimizers, the epoch loop, evaluation and MAC1 checkpoints.
//
// MAC1 checkpoint layout, little-endian:
//   "MAC1" magic, version u16 (= 1)
//   count u32, then `count` entries          -- model parameters
//   count u32, then `count` entries          -- optimizer state
//   epoch u32
//   config length u32, then UTF-8 JSON       -- resolved run configuration
// entry: name length u16, UTF-8 name, rank u8, rank x u32 dims, f32 values.
// Optimizer entries: "optimizer.sgd" or "optimizer.adam" ([1], step count),
// then for Adam "adam.m/<param>" and "adam.v/<param>".

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mac/metrics.hpp"
#include "mac/model.hpp"

namespace mac {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::string optimizer = "adam";  // "adam" or "sgd"
  std::string init = "xavier";     // "xavier" or "zeros"
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0 = final only

  void validate() const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::string kind = "adam";
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;  // Adam moments, one per parameter
};

/// One update of every parameter from its accumulated gradient. Adam uses
/// bias-corrected moments; SGD is p -= lr * g. InternalError if a parameter
/// carries no gradient.
template <typename T>
void optimizer_step(std::vector<NamedParameter<T>>& params, OptimizerState<T>& state, double learning_rate,
                    const AdamHyper& hyper = {});

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::string config_json;        // echoed into checkpoints
  std::ostream* log = nullptr;    // progress lines
  /// Called after every optimizer step with (epoch, step, batch loss).
  std::function<void(std::size_t, std::size_t, double)> on_step;
};

struct TrainResult {
  std::vector<double> epoch_losses;
  OptimizerState<float> optimizer;
  std::size_t steps = 0;
};

/// Epochs of seeded-shuffle mini-batch training. Writes `loss.tsv` and
/// checkpoints (`checkpoint_epochNNN.mac`, `final.mac`) when out_dir is set.
/// DivergenceError naming the batch if the loss goes non-finite.
TrainResult train(Model<float>& model, std::span<const Sample> samples, const TrainConfig& cfg,
                  const TrainOptions& options = {});

/// Loss-log lines "epoch<TAB>loss", epochs counted from 1.
std::string format_loss_log(std::span<const double> losses);

struct Evaluation {
  MetricsReport report;
  std::vector<std::vector<float>> probabilities;
  std::vector<std::vector<std::uint8_t>> predictions;
};

Evaluation evaluate(const Model<float>& model, std::span<const Sample> samples, double threshold,
                    std::size_t batch_size = 32);

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> optimizer;
  std::uint32_t epoch = 0;
  std::string config_json;
};

constexpr std::uint16_t kCheckpointVersion = 1;

Checkpoint make_checkpoint(const Model<float>& model, const OptimizerState<float>& state, std::uint32_t epoch,
                           std::string config_json);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into the model. ShapeMismatchError when names or
/// shapes differ.
void apply_checkpoint(Model<float>& model, const Checkpoint& ckpt);
OptimizerState<float> optimizer_state(const Checkpoint& ckpt, const Model<float>& model);

}  // namespace mac
