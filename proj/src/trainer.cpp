#include "mac/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mac/errors.hpp"
#include "mac/ops.hpp"

namespace mac {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("train.learning_rate must be finite and non-negative");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (optimizer != "adam" && optimizer != "sgd")
    throw ConfigError("train.optimizer must be adam or sgd, got '" + optimizer + "'");
  parse_init_scheme(init);
}

template <typename T>
void optimizer_step(std::vector<NamedParameter<T>>& params, OptimizerState<T>& state, double learning_rate,
                    const AdamHyper& hyper) {
  for (const auto& p : params)
    if (!p.tensor.has_grad()) throw InternalError("parameter " + p.name + " has no gradient");
  ++state.step;
  if (state.kind == "sgd") {
    for (auto& p : params) {
      auto w = p.tensor.data();
      auto g = p.tensor.grad();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= static_cast<T>(learning_rate * g[i]);
    }
    return;
  }
  if (state.kind != "adam") throw ConfigError("unknown optimizer '" + state.kind + "'");
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T(0));
      state.v.emplace_back(p.tensor.numel(), T(0));
    }
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor.data();
    auto g = params[k].tensor.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] -= static_cast<T>(learning_rate * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps));
    }
  }
}

template void optimizer_step(std::vector<NamedParameter<float>>&, OptimizerState<float>&, double, const AdamHyper&);
template void optimizer_step(std::vector<NamedParameter<double>>&, OptimizerState<double>&, double, const AdamHyper&);

std::string format_loss_log(std::span<const double> losses) {
  std::ostringstream os;
  char buf[64];
  for (std::size_t e = 0; e < losses.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\n", e + 1, losses[e]);
    os << buf;
  }
  return os.str();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

std::string checkpoint_name(std::size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch%03zu.mac", epoch);
  return buf;
}

}  // namespace

TrainResult train(Model<float>& model, std::span<const Sample> samples, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  if (samples.empty()) throw UsageError("train: no training samples");
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw UsageError("cannot create " + options.out_dir.string() + ": " + ec.message());
  }
  TrainResult result;
  result.optimizer.kind = cfg.optimizer;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(samples.size(), cfg.seed, epoch);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[order[i]]);
      model.zero_grad();
      const auto out = model.forward(batch);
      const auto loss = model.loss(out, batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::string ids;
        for (const Sample* s : batch) ids += (ids.empty() ? "" : ",") + s->id;
        throw DivergenceError("non-finite loss " + std::to_string(value) + " at epoch " + std::to_string(epoch + 1) +
                              ", batch " + std::to_string(batches + 1) + " (samples " + ids + ")");
      }
      loss.backward();
      optimizer_step(model.parameters(), result.optimizer, cfg.learning_rate);
      ++result.steps;
      if (options.on_step) options.on_step(epoch + 1, result.steps, value);
      total += value;
      ++batches;
    }
    result.epoch_losses.push_back(total / static_cast<double>(batches));
    if (options.log) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "epoch %zu/%zu loss %.6f\n", epoch + 1, cfg.epochs, result.epoch_losses.back());
      *options.log << buf << std::flush;
    }
    if (!options.out_dir.empty()) {
      write_text(options.out_dir / "loss.tsv", format_loss_log(result.epoch_losses));
      if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0)
        save_checkpoint(options.out_dir / checkpoint_name(epoch + 1),
                        make_checkpoint(model, result.optimizer, static_cast<std::uint32_t>(epoch + 1),
                                        options.config_json));
    }
  }
  if (!options.out_dir.empty())
    save_checkpoint(options.out_dir / "final.mac",
                    make_checkpoint(model, result.optimizer, static_cast<std::uint32_t>(cfg.epochs), options.config_json));
  return result;
}

Evaluation evaluate(const Model<float>& model, std::span<const Sample> samples, double threshold,
                    std::size_t batch_size) {
  check_threshold(threshold);
  if (samples.empty()) throw UsageError("evaluate: no samples");
  NoGradGuard no_grad;
  Evaluation ev;
  std::vector<SampleMetrics> per_sample;
  const std::size_t classes = model.config().num_classes;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
    const auto probs = posteriors(model.forward(batch).logits);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<float> p(probs.data().begin() + static_cast<std::ptrdiff_t>(b * classes),
                           probs.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * classes));
      auto pred = predict<float>(p, threshold);
      per_sample.push_back(example_metrics(batch[b]->labels, pred));
      ev.probabilities.push_back(std::move(p));
      ev.predictions.push_back(std::move(pred));
    }
  }
  ev.report = aggregate(per_sample, true);
  return ev;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCkptMagic[4] = {'M', 'A', 'C', '1'};

void put_u(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw TruncatedFileError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_entries(std::vector<std::uint8_t>& out, const std::vector<NamedArray>& entries) {
  put_u(out, entries.size(), 4);
  for (const auto& e : entries) {
    put_u(out, e.name.size(), 2);
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u(out, e.shape.size(), 1);
    for (auto d : e.shape) put_u(out, d, 4);
    for (float v : e.values) put_u(out, std::bit_cast<std::uint32_t>(v), 4);
  }
}

std::vector<NamedArray> get_entries(ByteReader& r) {
  const auto count = r.get(4);
  std::vector<NamedArray> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name = r.str(r.get(2));
    const auto rank = r.get(1);
    for (std::uint64_t d = 0; d < rank; ++d) e.shape.push_back(r.get(4));
    const auto n = shape_numel(e.shape);
    e.values.resize(n);
    for (auto& v : e.values) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.get(4)));
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace

Checkpoint make_checkpoint(const Model<float>& model, const OptimizerState<float>& state, std::uint32_t epoch,
                           std::string config_json) {
  Checkpoint c;
  for (const auto& p : model.parameters())
    c.parameters.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  c.optimizer.push_back({"optimizer." + state.kind, {1}, {static_cast<float>(state.step)}});
  if (state.kind == "adam" && state.m.size() == model.parameters().size()) {
    for (std::size_t k = 0; k < state.m.size(); ++k) {
      const auto& p = model.parameters()[k];
      c.optimizer.push_back({"adam.m/" + p.name, p.tensor.shape(), state.m[k]});
      c.optimizer.push_back({"adam.v/" + p.name, p.tensor.shape(), state.v[k]});
    }
  }
  c.epoch = epoch;
  c.config_json = std::move(config_json);
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 4);
  put_u(out, kCheckpointVersion, 2);
  put_entries(out, ckpt.parameters);
  put_entries(out, ckpt.optimizer);
  put_u(out, ckpt.epoch, 4);
  put_u(out, ckpt.config_json.size(), 4);
  out.insert(out.end(), ckpt.config_json.begin(), ckpt.config_json.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(4) != std::string(kCkptMagic, 4)) throw BadMagicError("not a MAC1 checkpoint");
  const auto version = r.get(2);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.parameters = get_entries(r);
  c.optimizer = get_entries(r);
  c.epoch = static_cast<std::uint32_t>(r.get(4));
  c.config_json = r.str(r.get(4));
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

void apply_checkpoint(Model<float>& model, const Checkpoint& ckpt) {
  auto& params = model.parameters();
  if (params.size() != ckpt.parameters.size())
    throw ShapeMismatchError("checkpoint has " + std::to_string(ckpt.parameters.size()) + " parameters, model has " +
                             std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& e = ckpt.parameters[k];
    if (e.name != params[k].name || e.shape != params[k].tensor.shape())
      throw ShapeMismatchError("checkpoint entry " + e.name + " " + shape_str(e.shape) + " does not match model " +
                               params[k].name + " " + shape_str(params[k].tensor.shape()));
  }
  for (std::size_t k = 0; k < params.size(); ++k)
    std::copy(ckpt.parameters[k].values.begin(), ckpt.parameters[k].values.end(), params[k].tensor.data().begin());
}

OptimizerState<float> optimizer_state(const Checkpoint& ckpt, const Model<float>& model) {
  OptimizerState<float> s;
  if (ckpt.optimizer.empty()) return s;
  const auto& head = ckpt.optimizer.front();
  if (head.name.rfind("optimizer.", 0) != 0) throw FormatError("checkpoint optimizer section malformed");
  s.kind = head.name.substr(10);
  s.step = static_cast<std::uint64_t>(head.values.at(0));
  if (s.kind == "adam" && ckpt.optimizer.size() > 1) {
    const auto& params = model.parameters();
    if (ckpt.optimizer.size() != 1 + 2 * params.size())
      throw ShapeMismatchError("checkpoint optimizer state does not match model parameters");
    for (std::size_t k = 0; k < params.size(); ++k) {
      s.m.push_back(ckpt.optimizer[1 + 2 * k].values);
      s.v.push_back(ckpt.optimizer[2 + 2 * k].values);
    }
  }
  return s;
}

}  // namespace mac
