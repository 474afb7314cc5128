#include "mac/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>

#include "mac/config.hpp"
#include "mac/errors.hpp"
#include "mac/gradcheck.hpp"
#include "mac/trainer.hpp"

namespace mac {

namespace fs = std::filesystem;

namespace {

struct GenerateArgs {
  std::string out;
  SyntheticOptions opt;
  std::optional<std::size_t> train_count, val_count, test_count;
};

// Flags that override the config file; unset optionals leave it alone.
struct TrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, checkpoint_every, hidden, heads, patches;
  std::optional<double> lr, threshold;
  std::optional<std::string> optimizer, init;
  bool per_position = false;
};

struct CheckpointArgs {
  std::string checkpoint, data, split = "test";
  std::optional<double> threshold;
  std::size_t limit = 0;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  bool modules = true;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream o(path, std::ios::trunc | std::ios::binary);
  if (!o) throw UsageError("cannot write " + path.string());
  o << text;
}

// Every report starts with the resolved configuration on one line.
std::string config_header(const RunConfig& cfg) { return "# config " + to_json(cfg, -1) + "\n"; }

int generate(const GenerateArgs& a, std::ostream& out) {
  if (a.opt.n == 0) throw UsageError("--n must be at least 1");
  SyntheticOptions opt = a.opt;
  if (a.train_count || a.val_count || a.test_count) {
    if (!(a.train_count && a.val_count && a.test_count))
      throw UsageError("--train-count, --val-count and --test-count must be given together");
    opt.counts = SplitCounts{*a.train_count, *a.val_count, *a.test_count};
  }
  const auto manifest = generate_synthetic(a.out, opt);
  out << "wrote " << opt.n << " samples to " << a.out << "\n"
      << "classes=" << manifest.num_classes() << "\n"
      << "train=" << manifest.train.size() << " val=" << manifest.val.size() << " test=" << manifest.test.size()
      << "\n";
  return kExitOk;
}

RunConfig resolve_train(const TrainArgs& a) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_run_config(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.out.empty()) cfg.out = a.out;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.checkpoint_every) cfg.train.checkpoint_every = *a.checkpoint_every;
  if (a.lr) cfg.train.learning_rate = *a.lr;
  if (a.optimizer) cfg.train.optimizer = *a.optimizer;
  if (a.init) cfg.train.init = *a.init;
  if (a.threshold) cfg.model.threshold = *a.threshold;
  if (a.hidden) cfg.model.hidden = *a.hidden;
  if (a.heads) cfg.model.attention_heads = *a.heads;
  if (a.patches) cfg.model.patches = *a.patches;
  if (a.per_position) cfg.model.per_position_lstm = true;
  if (cfg.data.empty()) throw UsageError("no dataset: pass --data or set \"data\" in the config");
  if (cfg.out.empty()) throw UsageError("no output directory: pass --out or set \"out\" in the config");
  return cfg;
}

DatasetManifest open_dataset(const std::string& root) {
  if (!fs::exists(manifest_path(root))) throw UsageError("no dataset manifest at " + manifest_path(root).string());
  return read_manifest(manifest_path(root));
}

std::string metrics_block(const std::string& split, const MetricsReport& r) {
  std::string s = "example-based metrics on " + split + " (" + std::to_string(r.n_samples) + " samples): precision " +
                  fmt("%.4f", r.precision) + ", recall " + fmt("%.4f", r.recall) + ", F1 " + fmt("%.4f", r.f1) +
                  ", F2 " + fmt("%.4f", r.f2) + "\n";
  return s + format_key_values(r);
}

int train_cmd(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_train(a);
  const auto manifest = open_dataset(cfg.data);
  cfg.model.adopt_dataset(manifest);
  cfg.model.check_dataset(manifest);
  cfg.model.validate();
  cfg.train.validate();

  const auto train_set = load_split(cfg.data, manifest, "train");
  if (train_set.empty()) throw UsageError("dataset has an empty train split");
  Model<float> model(cfg.model, cfg.train.seed, parse_init_scheme(cfg.train.init));
  fs::create_directories(cfg.out);
  const std::string json = to_json(cfg);
  write_file(fs::path(cfg.out) / "config.json", json + "\n");

  out << config_header(cfg);
  TrainOptions options;
  options.out_dir = cfg.out;
  options.config_json = json;
  options.log = &out;
  const auto result = train(model, train_set, cfg.train, options);

  std::string report = config_header(cfg);
  report += "steps=" + std::to_string(result.steps) + "\n";
  report += "final_loss=" + fmt("%.9g", result.epoch_losses.back()) + "\n";
  const auto val_set = load_split(cfg.data, manifest, "val");
  if (!val_set.empty()) report += metrics_block("val", evaluate(model, val_set, cfg.model.threshold).report);
  write_file(fs::path(cfg.out) / "report.txt", report);
  out << report.substr(report.find('\n') + 1);
  return kExitOk;
}

struct Loaded {
  RunConfig cfg;
  DatasetManifest manifest;
  std::unique_ptr<Model<float>> model;
  std::vector<Sample> samples;
};

Loaded load_for_inference(const CheckpointArgs& a) {
  if (!fs::exists(a.checkpoint)) throw UsageError("no checkpoint at " + a.checkpoint);
  const auto ckpt = load_checkpoint(a.checkpoint);
  Loaded l;
  l.cfg = parse_run_config(ckpt.config_json);
  if (!a.data.empty()) l.cfg.data = a.data;
  if (a.threshold) l.cfg.model.threshold = *a.threshold;
  check_threshold(l.cfg.model.threshold);
  l.manifest = open_dataset(l.cfg.data);
  l.cfg.model.check_dataset(l.manifest);
  l.model = std::make_unique<Model<float>>(l.cfg.model, l.cfg.train.seed, InitScheme::kZeros);
  apply_checkpoint(*l.model, ckpt);
  l.samples = load_split(l.cfg.data, l.manifest, a.split);
  if (l.samples.empty()) throw UsageError("split '" + a.split + "' is empty");
  if (a.limit && l.samples.size() > a.limit) l.samples.resize(a.limit);
  return l;
}

int evaluate_cmd(const CheckpointArgs& a, std::ostream& out) {
  auto l = load_for_inference(a);
  const auto ev = evaluate(*l.model, l.samples, l.cfg.model.threshold);
  out << config_header(l.cfg) << metrics_block(a.split, ev.report);
  return kExitOk;
}

int predict_cmd(const CheckpointArgs& a, std::ostream& out) {
  auto l = load_for_inference(a);
  const auto ev = evaluate(*l.model, l.samples, l.cfg.model.threshold);
  out << config_header(l.cfg);
  for (std::size_t i = 0; i < l.samples.size(); ++i) {
    std::string labels;
    for (std::size_t c = 0; c < ev.predictions[i].size(); ++c)
      if (ev.predictions[i][c]) labels += (labels.empty() ? "" : ",") + l.manifest.class_names[c];
    out << l.samples[i].id << "\t" << (labels.empty() ? "<none>" : labels) << "\n";
  }
  return kExitOk;
}

int attn_dump_cmd(const CheckpointArgs& a, std::ostream& out) {
  auto l = load_for_inference(a);
  NoGradGuard no_grad;
  out << config_header(l.cfg);
  const std::size_t heads = l.cfg.model.attention_heads, r = l.cfg.model.patches;
  for (const auto& s : l.samples) {
    const auto fw = l.model->forward(s);
    const auto scores = fw.attention.data();  // [1 x T x R]
    out << "sample " << s.id << "\n";
    for (std::size_t t = 0; t < heads; ++t) {
      out << "t" << t;
      for (std::size_t i = 0; i < r; ++i) out << "\t" << fmt("%.6f", scores[t * r + i]);
      out << "\n";
    }
  }
  return kExitOk;
}

int gradcheck_cmd(const GradcheckArgs& a, std::ostream& out) {
  RunConfig cfg;
  cfg.model = gradcheck_model_config();
  cfg.train.seed = a.seed;
  out << config_header(cfg);
  const GradcheckOptions options;
  out << "# step " << fmt("%.0e", options.step) << ", tolerance " << fmt("%.0e", options.tolerance)
      << ", relative-error floor " << fmt("%.0e", options.floor) << "\n";
  std::vector<GradcheckReport> reports{gradcheck_model(cfg.model, a.seed, options)};
  if (a.modules) {
    auto more = module_gradchecks(a.seed, options);
    reports.insert(reports.end(), more.begin(), more.end());
  }
  bool ok = true;
  for (const auto& r : reports) {
    out << format_report(r);
    ok = ok && r.passed;
  }
  out << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

void add_checkpoint_options(CLI::App* cmd, CheckpointArgs& a, bool with_limit) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file (.mac)")->required();
  cmd->add_option("--data", a.data, "Dataset root (default: the one recorded in the checkpoint)");
  cmd->add_option("--split", a.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  cmd->add_option("--threshold", a.threshold, "Decision threshold in (0, 1)");
  if (with_limit) cmd->add_option("--limit", a.limit, "Only the first N samples (0 = all)");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-attention CNN+RNN multi-label classifier", "mac"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Write a synthetic multi-spectral dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.opt.seed, "Generator seed");
  g->add_option("--n", gen.opt.n, "Number of samples");
  g->add_option("--profile", gen.opt.profile, "tiny or bigearthnet")->check(CLI::IsMember({"tiny", "bigearthnet"}));
  g->add_option("--noise", gen.opt.noise, "Gaussian pixel noise sigma")->check(CLI::NonNegativeNumber);
  g->add_option("--classes", gen.opt.classes, "Number of classes (0 = profile default)");
  g->add_option("--train-frac", gen.opt.train_frac);
  g->add_option("--val-frac", gen.opt.val_frac);
  g->add_option("--test-frac", gen.opt.test_frac);
  g->add_option("--train-count", gen.train_count, "Exact split sizes instead of fractions");
  g->add_option("--val-count", gen.val_count);
  g->add_option("--test-count", gen.test_count);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write checkpoints");
  t->add_option("--config", tr.config, "JSON run configuration; flags override it");
  t->add_option("--data", tr.data, "Dataset root");
  t->add_option("--out", tr.out, "Output directory");
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--optimizer", tr.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  t->add_option("--init", tr.init)->check(CLI::IsMember({"xavier", "zeros"}));
  t->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints (0 = final only)");
  t->add_option("--threshold", tr.threshold);
  t->add_option("--hidden", tr.hidden, "LSTM units per direction");
  t->add_option("--attention-heads", tr.heads);
  t->add_option("--patches", tr.patches);
  t->add_flag("--per-position-lstm", tr.per_position, "Separate LSTM weights for every patch position");

  CheckpointArgs ev, pr, at;
  auto* e = app.add_subcommand("evaluate", "Example-based metrics of a checkpoint on a split");
  add_checkpoint_options(e, ev, false);
  auto* p = app.add_subcommand("predict", "Predicted label sets per sample");
  add_checkpoint_options(p, pr, true);
  auto* a = app.add_subcommand("attn-dump", "Attention scores (T x R) per sample");
  add_checkpoint_options(a, at, true);

  GradcheckArgs gc;
  auto* gcmd = app.add_subcommand("gradcheck", "Finite-difference check of all gradients at 64-bit");
  gcmd->add_option("--seed", gc.seed);
  gcmd->add_flag("!--no-modules", gc.modules, "Skip the per-module checks");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) return generate(gen, out);
    if (t->parsed()) return train_cmd(tr, out);
    if (e->parsed()) return evaluate_cmd(ev, out);
    if (p->parsed()) return predict_cmd(pr, out);
    if (a->parsed()) return attn_dump_cmd(at, out);
    if (gcmd->parsed()) return gradcheck_cmd(gc, out);
  } catch (const DivergenceError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::invalid_argument& ex) {  // config, usage and dimension errors
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace mac
