#include <doctest.h>

#include <fstream>

#include "mac/errors.hpp"
#include "mac/init.hpp"
#include "mac/ops.hpp"
#include "mac/trainer.hpp"
#include "test_util.hpp"

using namespace mac;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> tiny_samples(std::size_t n, std::uint64_t seed = 42) {
  SyntheticOptions opt;
  opt.seed = seed;
  const auto world = make_world(opt);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthesize_sample(world, opt, i));
  return out;
}

ModelConfig tiny_config() {
  auto cfg = ModelConfig::defaults();
  cfg.inputs = profile_subsets("tiny");
  cfg.num_classes = 8;
  return cfg;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& s) {
  std::vector<const Sample*> p;
  for (const auto& x : s) p.push_back(&x);
  return p;
}

}  // namespace

TEST_CASE("xavier bound and fans") {
  CHECK(xavier_bound(xavier_fans({100, 100})) == doctest::Approx(0.1732050808).epsilon(1e-9));
  const auto conv = xavier_fans({64, 32, 3, 3});
  CHECK(conv.in == 32 * 9);
  CHECK(conv.out == 64 * 9);
  const auto mat = xavier_fans({10, 20});
  CHECK(mat.in == 20);
  CHECK(mat.out == 10);
}

TEST_CASE("xavier draws") {
  const auto t = xavier_init<double>({1000, 1000}, 3, "w");
  const double a = std::sqrt(6.0 / 2000.0);
  double sum = 0;
  for (double v : t.data()) {
    CHECK_MESSAGE(std::abs(v) <= a, v);
    sum += v;
  }
  const double mean = sum / 1e6, sigma = a / std::sqrt(3.0) / 1e3;
  CHECK(std::abs(mean) < 3 * sigma);
  CHECK(testing::bit_equal(t, xavier_init<double>({1000, 1000}, 3, "w")));
  CHECK_FALSE(testing::bit_equal(t, xavier_init<double>({1000, 1000}, 3, "v")));
  CHECK_FALSE(testing::bit_equal(t, xavier_init<double>({1000, 1000}, 4, "w")));
}

TEST_CASE("model parameters") {
  const Model<float> model(tiny_config(), 1);
  const auto& p = model.parameters();
  CHECK(p.front().name == "branch0.conv0.kernel");
  CHECK(p.front().tensor.shape() == Shape{32, 4, 5, 5});
  CHECK(p.back().name == "classifier.bias");
  for (const auto& n : p) {
    if (n.name.find("bias") != std::string::npos || n.name.find(".b_") != std::string::npos)
      for (float v : n.tensor.data()) CHECK(v == 0.f);
  }
  CHECK(model.lstm_forward().front().w_f.shape() == Shape{128, 128});
  CHECK(model.attention().w1.shape() == Shape{64, 256});
  CHECK(model.attention().w2.shape() == Shape{4, 64});
  CHECK(model.fusion().weight.shape() == Shape{128, 384});

  auto per = tiny_config();
  per.per_position_lstm = true;
  const Model<float> pp(per, 1);
  CHECK(pp.lstm_forward().size() == 16);
  CHECK(pp.parameter_count() > model.parameter_count());
}

TEST_CASE("model forward shapes and batching") {
  const auto samples = tiny_samples(3);
  const Model<float> model(tiny_config(), 2);
  NoGradGuard no_grad;
  const auto batch = pointers(samples);
  const auto out = model.forward(batch);
  CHECK(out.descriptors.shape() == Shape{3, 16, 128});
  CHECK(out.sequential.shape() == Shape{3, 16, 256});
  CHECK(out.attention.shape() == Shape{3, 4, 16});
  CHECK(out.pooled.shape() == Shape{3, 4, 256});
  CHECK(out.logits.shape() == Shape{3, 8});
  for (std::size_t b = 0; b < 3; ++b) {
    const auto one = model.forward(samples[b]);
    CHECK(testing::max_abs_diff(one.logits, reshape(select(out.logits, 0, b), {1, 8})) < 1e-6);
  }
  for (float v : out.pooled.data()) CHECK(v >= 0.f);
}

TEST_CASE("single branch over a single patch is a plain CNN") {
  ModelConfig cfg;
  BranchSpec b;
  b.band_indices = {"a", "b"};
  b.layers = {{3, 4, true}, {3, 8, false}, {3, 16, false}, {3, 8, false}};
  b.fc_out = 5;
  cfg.branches = {b};
  cfg.inputs = {{2, 8, 8, {}}};
  cfg.patches = 1;
  cfg.descriptor_width = 6;
  cfg.hidden = 3;
  cfg.attention_width = 2;
  cfg.attention_heads = 1;
  cfg.num_classes = 2;
  Model<double> model(cfg, 3);
  Rng rng(4);
  Sample s;
  s.id = "x";
  s.subsets = {testing::random_tensor<float>(rng, {2, 8, 8})};
  s.labels = {1, 0};
  const auto out = model.forward(s);

  // Direct evaluation on the whole image.
  Tensord h = cast<double>(s.subsets[0]);
  const auto& bp = model.branches()[0];
  h = maxpool2(relu(conv2d(h, bp.convs[0].kernel, bp.convs[0].bias)));
  h = relu(conv2d(h, bp.convs[1].kernel, bp.convs[1].bias));
  h = relu(conv2d(h, bp.convs[2].kernel, bp.convs[2].bias));
  h = relu(conv2d(h, bp.convs[3].kernel, bp.convs[3].bias));
  h = relu(fc(reshape(h, {h.numel()}), bp.fc_weight, bp.fc_bias));
  const auto psi = fc(h, model.fusion().weight, model.fusion().bias);
  CHECK(testing::max_abs_diff(reshape(out.descriptors, {6}), psi) < 1e-14);
}

TEST_CASE("model configuration errors name the field") {
  DatasetManifest m;
  m.subsets = profile_subsets("tiny");
  m.class_names.assign(8, "c");
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.check_dataset(m));
  cfg.num_classes = 5;
  try {
    cfg.check_dataset(m);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.num_classes") != std::string::npos);
  }
  cfg = tiny_config();
  cfg.inputs[1].height = 16;
  try {
    cfg.check_dataset(m);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.inputs[1]") != std::string::npos);
  }
  cfg = tiny_config();
  cfg.patches = 15;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.patches = 64;  // 3x3 patches of the 20 m subset cannot be pooled twice... nor split 12/8
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.threshold = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(parse_init_scheme("he"), ConfigError);
}

TEST_CASE("adam first step moves each weight by about the learning rate") {
  std::vector<NamedParameter<double>> params{{"w", Tensord::from({4}, {0.0, 1.0, -2.0, 3.0}, true)}};
  const std::vector<double> g{0.3, -2.0, 1e-3, 50.0};
  std::copy(g.begin(), g.end(), params[0].tensor.grad().begin());
  OptimizerState<double> state;
  optimizer_step(params, state, 1e-3);
  const std::vector<double> before{0.0, 1.0, -2.0, 3.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double step = before[i] - params[0].tensor.data()[i];
    // Bias-corrected ratio m/sqrt(v) = g/|g| on the first step.
    CHECK(step == doctest::Approx(1e-3 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-9));
  }
  CHECK(state.step == 1);
}

TEST_CASE("optimizer edge cases") {
  std::vector<NamedParameter<double>> params{{"w", Tensord::from({2}, {1.0, 2.0}, true)}};
  params[0].tensor.grad();  // allocates a zero gradient
  OptimizerState<double> sgd;
  sgd.kind = "sgd";
  optimizer_step(params, sgd, 0.1);
  CHECK(testing::values(params[0].tensor) == std::vector<double>{1.0, 2.0});

  params[0].tensor.grad()[0] = 5.0;
  OptimizerState<double> adam;
  for (int i = 0; i < 10; ++i) optimizer_step(params, adam, 0.0);
  CHECK(testing::values(params[0].tensor) == std::vector<double>{1.0, 2.0});

  std::vector<NamedParameter<double>> fresh{{"u", Tensord::from({1}, {1.0}, true)}};
  CHECK_THROWS_AS(optimizer_step(fresh, adam, 0.1), InternalError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.optimizer = "rmsprop";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training is deterministic and writes its artifacts") {
  const auto samples = tiny_samples(20);
  testing::TempDir dir("train_det");
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 5;
  cfg.checkpoint_every = 2;
  TrainOptions opt;
  opt.config_json = "{\"note\":1}";
  std::vector<std::size_t> steps;
  opt.on_step = [&](std::size_t, std::size_t step, double) { steps.push_back(step); };

  Model<float> a(tiny_config(), 5);
  opt.out_dir = dir.path() / "a";
  const auto ra = train(a, samples, cfg, opt);
  CHECK(ra.epoch_losses.size() == 3);
  CHECK(ra.steps == 9);
  CHECK(steps.size() == 9);

  Model<float> b(tiny_config(), 5);
  opt.out_dir = dir.path() / "b";
  const auto rb = train(b, samples, cfg, opt);
  CHECK(ra.epoch_losses == rb.epoch_losses);
  CHECK(testing::read_bytes(dir.path() / "a" / "final.mac") == testing::read_bytes(dir.path() / "b" / "final.mac"));
  CHECK(fs::exists(dir.path() / "a" / "checkpoint_epoch002.mac"));
  CHECK_FALSE(fs::exists(dir.path() / "a" / "checkpoint_epoch003.mac"));

  std::ifstream log(dir.path() / "a" / "loss.tsv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(line.rfind(std::to_string(lines) + "\t", 0) == 0);
  }
  CHECK(lines == 3);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto samples = tiny_samples(4);
  Model<float> model(tiny_config(), 6);
  const Model<float> reference(tiny_config(), 6);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 2;
  train(model, samples, cfg);
  for (std::size_t k = 0; k < model.parameters().size(); ++k)
    CHECK(testing::bit_equal(model.parameters()[k].tensor, reference.parameters()[k].tensor));
}

TEST_CASE("a non-finite loss stops training and names the batch") {
  auto samples = tiny_samples(6);
  samples[4].subsets[0].data()[3] = std::numeric_limits<float>::quiet_NaN();
  Model<float> model(tiny_config(), 7);
  TrainConfig cfg;
  cfg.batch_size = 2;
  try {
    train(model, samples, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
    CHECK(msg.find(samples[4].id) != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip") {
  const auto samples = tiny_samples(8);
  Model<float> model(tiny_config(), 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  const auto result = train(model, samples, cfg);
  testing::TempDir dir("ckpt");
  const auto path = dir.path() / "m.mac";
  save_checkpoint(path, make_checkpoint(model, result.optimizer, 1, "{\"learning_rate\":0.001}"));

  const auto ckpt = load_checkpoint(path);
  CHECK(ckpt.epoch == 1);
  CHECK(ckpt.config_json == "{\"learning_rate\":0.001}");
  CHECK(ckpt.optimizer.front().name == "optimizer.adam");
  Model<float> restored(tiny_config(), 999, InitScheme::kZeros);
  apply_checkpoint(restored, ckpt);
  NoGradGuard no_grad;
  const auto batch = pointers(samples);
  const auto x = model.forward(batch), y = restored.forward(batch);
  CHECK(testing::bit_equal(x.logits, y.logits));
  CHECK(testing::bit_equal(x.attention, y.attention));

  const auto state = optimizer_state(ckpt, restored);
  CHECK(state.step == result.optimizer.step);
  CHECK(state.m == result.optimizer.m);
  CHECK(state.v == result.optimizer.v);

  auto bytes = encode_checkpoint(ckpt);
  CHECK(decode_checkpoint(bytes).parameters.size() == ckpt.parameters.size());
  auto bad = bytes;
  bad[3] = '9';
  CHECK_THROWS_AS(decode_checkpoint(bad), BadMagicError);
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() / 2)), TruncatedFileError);

  auto other = tiny_config();
  other.hidden = 64;
  Model<float> mismatched(other, 1);
  CHECK_THROWS_AS(apply_checkpoint(mismatched, ckpt), ShapeMismatchError);
}

TEST_CASE("one sample is memorized within 200 steps") {
  const auto samples = tiny_samples(1);
  Model<float> model(tiny_config(), 42);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 1;
  double last = 1.0;
  std::size_t reached = 0;
  TrainOptions opt;
  opt.on_step = [&](std::size_t, std::size_t step, double loss) {
    last = loss;
    if (!reached && loss < 0.01) reached = step;
  };
  train(model, samples, cfg, opt);
  CHECK(reached > 0);
  CHECK(reached <= 200);
  CHECK(last < 0.01);
  const auto ev = evaluate(model, samples, 0.5);
  CHECK(ev.report.recall == 1.0);
  CHECK(ev.report.f1 == 1.0);
  CHECK(ev.report.f2 == 1.0);
}
