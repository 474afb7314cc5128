#include "mac/config.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mac/errors.hpp"

namespace mac {

using ojson = nlohmann::ordered_json;

namespace {

ojson subset_json(const SubsetShape& s) {
  return {{"bands", s.bands}, {"height", s.height}, {"width", s.width}, {"band_names", s.band_names}};
}

ojson branch_json(const BranchSpec& b) {
  ojson layers = ojson::array();
  for (const auto& l : b.layers) layers.push_back({{"kernel", l.kernel}, {"filters", l.filters}, {"pool", l.pool}});
  return {{"bands", b.band_indices}, {"layers", layers}, {"fc_out", b.fc_out}};
}

// Field reader that remembers the dotted path for error messages and rejects
// keys it was never asked about.
class Reader {
 public:
  Reader(const ojson& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(field(key) + ": expected a number");
      }
      dst = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  const ojson* child(const char* key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(field(it.key()) + ": unknown key");
  }

 private:
  const ojson& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

const ojson& require_array(const ojson* j, const std::string& path) {
  if (!j->is_array()) throw ConfigError(path + ": expected an array");
  return *j;
}

void read_model(const ojson& j, ModelConfig& m) {
  Reader r(j, "model");
  r.get("patches", m.patches);
  r.get("descriptor_width", m.descriptor_width);
  r.get("hidden", m.hidden);
  r.get("per_position_lstm", m.per_position_lstm);
  r.get("attention_width", m.attention_width);
  r.get("attention_heads", m.attention_heads);
  r.get("num_classes", m.num_classes);
  r.get("threshold", m.threshold);
  if (const auto* in = r.child("inputs")) {
    m.inputs.clear();
    const auto& arr = require_array(in, "model.inputs");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Reader s(arr[i], "model.inputs[" + std::to_string(i) + "]");
      SubsetShape shape;
      s.get("bands", shape.bands);
      s.get("height", shape.height);
      s.get("width", shape.width);
      s.get("band_names", shape.band_names);
      s.finish();
      m.inputs.push_back(std::move(shape));
    }
  }
  if (const auto* br = r.child("branches")) {
    m.branches.clear();
    const auto& arr = require_array(br, "model.branches");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto path = "model.branches[" + std::to_string(i) + "]";
      Reader b(arr[i], path);
      BranchSpec spec;
      b.get("bands", spec.band_indices);
      b.get("fc_out", spec.fc_out);
      if (const auto* layers = b.child("layers")) {
        const auto& la = require_array(layers, path + ".layers");
        for (std::size_t l = 0; l < la.size(); ++l) {
          Reader lr(la[l], path + ".layers[" + std::to_string(l) + "]");
          ConvLayerSpec layer;
          lr.get("kernel", layer.kernel);
          lr.get("filters", layer.filters);
          lr.get("pool", layer.pool);
          lr.finish();
          spec.layers.push_back(layer);
        }
      }
      b.finish();
      m.branches.push_back(std::move(spec));
    }
  }
  r.finish();
}

void read_train(const ojson& j, TrainConfig& t) {
  Reader r(j, "train");
  r.get("learning_rate", t.learning_rate);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("optimizer", t.optimizer);
  r.get("init", t.init);
  r.get("seed", t.seed);
  r.get("checkpoint_every", t.checkpoint_every);
  r.finish();
}

}  // namespace

std::string to_json(const RunConfig& c, int indent) {
  ojson inputs = ojson::array(), branches = ojson::array();
  for (const auto& s : c.model.inputs) inputs.push_back(subset_json(s));
  for (const auto& b : c.model.branches) branches.push_back(branch_json(b));
  const ojson model = {{"inputs", inputs},
                       {"branches", branches},
                       {"patches", c.model.patches},
                       {"descriptor_width", c.model.descriptor_width},
                       {"hidden", c.model.hidden},
                       {"per_position_lstm", c.model.per_position_lstm},
                       {"attention_width", c.model.attention_width},
                       {"attention_heads", c.model.attention_heads},
                       {"num_classes", c.model.num_classes},
                       {"threshold", c.model.threshold}};
  const ojson train = {{"learning_rate", c.train.learning_rate}, {"epochs", c.train.epochs},
                       {"batch_size", c.train.batch_size},       {"optimizer", c.train.optimizer},
                       {"init", c.train.init},                   {"seed", c.train.seed},
                       {"checkpoint_every", c.train.checkpoint_every}};
  const ojson j = {{"model", model}, {"train", train}, {"data", c.data}, {"out", c.out}};
  return j.dump(indent);
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Reader r(j, "");
  if (const auto* m = r.child("model")) read_model(*m, base.model);
  if (const auto* t = r.child("train")) read_train(*t, base.train);
  r.get("data", base.data);
  r.get("out", base.out);
  r.finish();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

}  // namespace mac
