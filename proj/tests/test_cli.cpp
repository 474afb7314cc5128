#include <doctest.h>

#include <fstream>
#include <sstream>

#include "mac/cli.hpp"
#include "mac/config.hpp"
#include "mac/errors.hpp"
#include "test_util.hpp"

using namespace mac;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("run configuration JSON") {
  RunConfig c;
  c.model.inputs = profile_subsets("tiny");
  c.model.num_classes = 8;
  c.train.epochs = 7;
  c.data = "d";
  const auto back = parse_run_config(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.model.branches == c.model.branches);
  CHECK(back.train.epochs == 7);

  const auto partial = parse_run_config(R"({"train": {"learning_rate": 0.01}, "model": {"hidden": 16}})");
  CHECK(partial.train.learning_rate == 0.01);
  CHECK(partial.train.epochs == 100);
  CHECK(partial.model.hidden == 16);
  CHECK(partial.model.branches == default_branches());

  auto expect_field = [](const std::string& text, const std::string& field) {
    try {
      parse_run_config(text);
      FAIL("expected ConfigError for " << text);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(field) != std::string::npos, e.what());
    }
  };
  expect_field(R"({"train": {"lr": 0.1}})", "train.lr");
  expect_field(R"({"train": {"epochs": "ten"}})", "train.epochs");
  expect_field(R"({"train": {"epochs": -3}})", "train.epochs");
  expect_field(R"({"model": {"branches": [{"layers": [{"kernal": 3}]}]}})", "model.branches[0].layers[0].kernal");
  expect_field(R"({"model": {"inputs": 3}})", "model.inputs");
  expect_field("{not json", "JSON");
}

TEST_CASE("generate-data") {
  testing::TempDir dir("cli_generate");
  const auto a = (dir.path() / "a").string(), b = (dir.path() / "b").string();
  auto r = run({"generate-data", "--out", a, "--seed", "42", "--n", "64", "--profile", "tiny"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train=38 val=13 test=13") != std::string::npos);
  REQUIRE(run({"generate-data", "--out", b, "--seed", "42", "--n", "64", "--profile", "tiny"}).code == 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto twin = fs::path(b) / fs::relative(e.path(), a);
    CHECK(testing::read_bytes(e.path()) == testing::read_bytes(twin));
  }

  CHECK(run({"generate-data", "--out", a, "--n", "0"}).code == 2);
  CHECK(run({"generate-data", "--out", "/proc/mac_cannot_write_here", "--n", "4"}).code == 2);
  CHECK(run({"generate-data", "--out", a, "--profile", "landsat"}).code == 2);
  CHECK(run({"generate-data", "--out", a, "--n", "10", "--train-count", "5"}).code == 2);
  CHECK(run({"generate-data"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("train, evaluate, predict and attn-dump") {
  testing::TempDir dir("cli_train");
  const auto data = (dir.path() / "data").string(), out = (dir.path() / "run").string();
  REQUIRE(run({"generate-data", "--out", data, "--n", "24"}).code == 0);

  // A config file sets the epoch count; the flag wins.
  const auto cfg_path = dir.path() / "cfg.json";
  std::ofstream(cfg_path) << R"({"train": {"epochs": 5, "batch_size": 8}, "model": {"hidden": 32}})";
  auto r = run({"train", "--data", data, "--out", out, "--config", cfg_path.string(), "--epochs", "2", "--seed", "3"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("# config {", 0) == 0);
  CHECK(r.out.find("f1=") != std::string::npos);
  CHECK(lines(slurp(fs::path(out) / "loss.tsv")).size() == 2);
  const auto resolved = load_run_config(fs::path(out) / "config.json");
  CHECK(resolved.train.epochs == 2);
  CHECK(resolved.train.batch_size == 8);
  CHECK(resolved.model.hidden == 32);
  CHECK(resolved.train.learning_rate == 1e-3);
  CHECK(resolved.model.num_classes == 8);

  const auto ckpt = (fs::path(out) / "final.mac").string();
  const auto echoed = parse_run_config(load_checkpoint(ckpt).config_json);
  CHECK(echoed.train.learning_rate == 1e-3);
  CHECK(load_checkpoint(ckpt).config_json.find("\"learning_rate\": 0.001") != std::string::npos);

  r = run({"evaluate", "--checkpoint", ckpt, "--split", "test"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("# config {", 0) == 0);
  for (const char* key : {"n_samples=", "precision=", "recall=", "f1=", "f2="}) CHECK(r.out.find(key) != std::string::npos);

  r = run({"predict", "--checkpoint", ckpt, "--split", "val", "--threshold", "0.99"});
  REQUIRE(r.code == 0);
  const auto pl = lines(r.out);
  CHECK(pl.size() == 1 + 5);
  for (std::size_t i = 1; i < pl.size(); ++i) {
    const auto tab = pl[i].find('\t');
    REQUIRE(tab != std::string::npos);
    const auto labels = pl[i].substr(tab + 1);
    CHECK((labels == "<none>" || labels.find("class") != std::string::npos));
  }
  CHECK(run({"predict", "--checkpoint", ckpt, "--threshold", "1.5"}).code == 2);

  r = run({"attn-dump", "--checkpoint", ckpt, "--split", "test", "--limit", "3"});
  REQUIRE(r.code == 0);
  std::size_t rows = 0;
  for (const auto& l : lines(r.out)) {
    if (l.rfind("t", 0) != 0) continue;
    std::istringstream in(l.substr(l.find('\t') + 1));
    double s = 0, v;
    std::size_t n = 0;
    while (in >> v) s += v, ++n;
    CHECK(n == 16);
    CHECK(std::abs(s - 1.0) <= 1e-5);
    ++rows;
  }
  CHECK(rows == 3 * 4);

  // Same flags, same bytes. The output directory is part of the echoed config,
  // so the rerun goes to the same place.
  const auto first = testing::read_bytes(ckpt);
  const auto first_log = slurp(fs::path(out) / "loss.tsv");
  REQUIRE(run({"train", "--data", data, "--out", out, "--config", cfg_path.string(), "--epochs", "2", "--seed", "3"}).code == 0);
  CHECK(first == testing::read_bytes(ckpt));
  CHECK(first_log == slurp(fs::path(out) / "loss.tsv"));
}

TEST_CASE("usage and configuration failures exit with 2") {
  testing::TempDir dir("cli_errors");
  const auto data = (dir.path() / "data").string();
  REQUIRE(run({"generate-data", "--out", data, "--n", "12"}).code == 0);

  auto r = run({"train", "--data", (dir.path() / "nowhere").string(), "--out", (dir.path() / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("manifest") != std::string::npos);

  const auto cfg_path = dir.path() / "bad.json";
  std::ofstream(cfg_path) << R"({"model": {"num_classes": 5}})";
  r = run({"train", "--data", data, "--out", (dir.path() / "o").string(), "--config", cfg_path.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("model.num_classes") != std::string::npos);

  r = run({"train", "--data", data});
  CHECK(r.code == 2);
  r = run({"train", "--data", data, "--out", (dir.path() / "o").string(), "--lr", "-1"});
  CHECK(r.code == 2);
  CHECK(run({"evaluate", "--checkpoint", (dir.path() / "none.mac").string()}).code == 2);

  // A checkpoint trained on 8 classes against a 5-class dataset.
  const auto five = (dir.path() / "five").string();
  REQUIRE(run({"generate-data", "--out", five, "--n", "12", "--classes", "5"}).code == 0);
  const auto out = (dir.path() / "r").string();
  REQUIRE(run({"train", "--data", data, "--out", out, "--epochs", "1", "--hidden", "8"}).code == 0);
  r = run({"evaluate", "--checkpoint", (fs::path(out) / "final.mac").string(), "--data", five});
  CHECK(r.code == 2);
  CHECK(r.err.find("num_classes") != std::string::npos);

  std::ofstream(dir.path() / "junk.mac") << "JUNKJUNKJUNK";
  CHECK(run({"evaluate", "--checkpoint", (dir.path() / "junk.mac").string(), "--data", data}).code == 2);
}

TEST_CASE("single-sample overfit through the command line") {
  testing::TempDir dir("cli_overfit");
  const auto data = (dir.path() / "one").string(), out = (dir.path() / "run").string();
  REQUIRE(run({"generate-data", "--out", data, "--n", "1", "--train-count", "1", "--val-count", "0",
               "--test-count", "0"})
              .code == 0);
  REQUIRE(run({"train", "--data", data, "--out", out, "--epochs", "200", "--batch-size", "1", "--seed", "42"}).code == 0);
  const auto losses = lines(slurp(fs::path(out) / "loss.tsv"));
  CHECK(std::stod(losses.back().substr(losses.back().find('\t') + 1)) < 0.01);
  const auto r = run({"evaluate", "--checkpoint", (fs::path(out) / "final.mac").string(), "--split", "train"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("recall=1.000000") != std::string::npos);
  CHECK(r.out.find("f1=1.000000") != std::string::npos);
  CHECK(r.out.find("f2=1.000000") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "--seed", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("# config {", 0) == 0);
  CHECK(r.out.find("gradcheck PASS") != std::string::npos);
  CHECK(r.out.find("lstm_cell: PASS") != std::string::npos);
}
