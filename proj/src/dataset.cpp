#include "mac/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mac/errors.hpp"
#include "mac/rng.hpp"

namespace mac {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t Sample::num_positive() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

const std::vector<std::string>& DatasetManifest::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw UsageError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

void DatasetManifest::validate() const {
  if (subsets.empty()) throw ConfigError("manifest has no band subsets");
  if (class_names.empty()) throw ConfigError("manifest has no classes");
  std::vector<std::string> all;
  for (const auto* s : {&train, &val, &test}) all.insert(all.end(), s->begin(), s->end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw ConfigError("manifest splits are not disjoint");
}

// ---------------------------------------------------------------------------
// MRS1 encoding

namespace {

constexpr char kMagic[4] = {'M', 'R', 'S', '1'};

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw TruncatedFileError(what_ + ": truncated at byte " + std::to_string(pos_) + " of " +
                               std::to_string(bytes_.size()));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_sample(const Sample& sample) {
  Writer w;
  w.raw(kMagic, 4);
  w.put<std::uint16_t>(kSampleVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(sample.subsets.size()));
  for (const auto& t : sample.subsets) {
    if (t.rank() != 3) throw DimensionError("sample subset must be bands x H x W, got " + shape_str(t.shape()));
    for (auto d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.put_f32(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sample.labels.size()));
  w.raw(sample.labels.data(), sample.labels.size());
  return w.take();
}

Sample decode_sample(std::span<const std::uint8_t> bytes, std::string id) {
  Reader r(bytes, id.empty() ? "sample" : id);
  auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw BadMagicError("not an MRS1 sample file: " + id);
  const auto version = r.get<std::uint16_t>();
  if (version != kSampleVersion)
    throw FormatError("unsupported MRS1 version " + std::to_string(version) + " in " + id);
  const auto k = r.get<std::uint16_t>();
  Sample s;
  s.id = std::move(id);
  for (std::uint16_t i = 0; i < k; ++i) {
    Shape shape{r.get<std::uint32_t>(), r.get<std::uint32_t>(), r.get<std::uint32_t>()};
    if (shape_numel(shape) == 0) throw FormatError("empty subset in " + s.id);
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = r.get_f32();
    s.subsets.push_back(Tensorf::from(std::move(shape), std::move(values)));
  }
  const auto c = r.get<std::uint32_t>();
  auto labels = r.raw(c);
  for (auto b : labels)
    if (b > 1) throw FormatError("label byte " + std::to_string(b) + " is not 0/1 in " + s.id);
  s.labels.assign(labels.begin(), labels.end());
  if (!r.done()) throw FormatError("trailing bytes after labels in " + s.id);
  return s;
}

void write_sample(const fs::path& path, const Sample& sample) { write_file(path, encode_sample(sample)); }

Sample read_sample(const fs::path& path) {
  return decode_sample(read_file(path), path.stem().string());
}

Sample read_sample(const fs::path& path, const DatasetManifest& manifest) {
  Sample s = read_sample(path);
  if (s.subsets.size() != manifest.num_subsets())
    throw ShapeMismatchError(s.id + ": " + std::to_string(s.subsets.size()) + " subsets, manifest has " +
                             std::to_string(manifest.num_subsets()));
  for (std::size_t k = 0; k < s.subsets.size(); ++k) {
    const auto& m = manifest.subsets[k];
    if (s.subsets[k].shape() != Shape{m.bands, m.height, m.width})
      throw ShapeMismatchError(s.id + ": subset " + std::to_string(k) + " is " +
                               shape_str(s.subsets[k].shape()) + ", manifest says " +
                               shape_str({m.bands, m.height, m.width}));
  }
  if (s.labels.size() != manifest.num_classes())
    throw ShapeMismatchError(s.id + ": " + std::to_string(s.labels.size()) + " labels, manifest has " +
                             std::to_string(manifest.num_classes()) + " classes");
  return s;
}

// ---------------------------------------------------------------------------
// Manifest

fs::path manifest_path(const fs::path& root) { return root / "manifest.json"; }

fs::path sample_path(const fs::path& root, std::string_view id) {
  return root / "samples" / (std::string(id) + ".mrs");
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  json j;
  j["format"] = "mrs-manifest";
  j["version"] = 1;
  j["num_subsets"] = m.subsets.size();
  json subsets = json::array();
  for (const auto& s : m.subsets)
    subsets.push_back({{"bands", s.bands}, {"height", s.height}, {"width", s.width}, {"band_names", s.band_names}});
  j["subsets"] = subsets;
  j["num_classes"] = m.class_names.size();
  j["class_names"] = m.class_names;
  j["splits"] = {{"train", m.train}, {"val", m.val}, {"test", m.test}};
  if (m.generator)
    j["generator"] = {{"seed", m.generator->seed},
                      {"profile", m.generator->profile},
                      {"noise", m.generator->noise},
                      {"n", m.generator->n}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "mrs-manifest") throw FormatError("not a dataset manifest: " + path.string());
    for (const auto& s : j.at("subsets"))
      m.subsets.push_back({s.at("bands").get<std::size_t>(), s.at("height").get<std::size_t>(),
                           s.at("width").get<std::size_t>(),
                           s.value("band_names", std::vector<std::string>{})});
    if (j.at("num_subsets").get<std::size_t>() != m.subsets.size())
      throw FormatError("num_subsets disagrees with subsets list in " + path.string());
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.at("num_classes").get<std::size_t>() != m.class_names.size())
      throw FormatError("num_classes disagrees with class_names in " + path.string());
    const auto& splits = j.at("splits");
    m.train = splits.at("train").get<std::vector<std::string>>();
    m.val = splits.value("val", std::vector<std::string>{});
    m.test = splits.value("test", std::vector<std::string>{});
    if (j.contains("generator")) {
      const auto& g = j["generator"];
      m.generator = GeneratorInfo{g.at("seed").get<std::uint64_t>(), g.at("profile").get<std::string>(),
                                  g.at("noise").get<double>(), g.at("n").get<std::size_t>()};
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  m.validate();
  return m;
}

SplitCounts split_counts(std::size_t n, double train_frac, double val_frac, double test_frac) {
  const double fr[3] = {train_frac, val_frac, test_frac};
  for (double f : fr)
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  const double total = fr[0] + fr[1] + fr[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  std::size_t base[3];
  double rem[3];
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * fr[i];
    base[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(base[i]);
    used += base[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t left = n - std::min(n, used), i = 0; left > 0; --left, i = (i + 1) % 3) ++base[order[i]];
  return {base[0], base[1], base[2]};
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

std::vector<std::string> band_names(std::initializer_list<const char*> names) {
  return {names.begin(), names.end()};
}

}  // namespace

std::size_t SyntheticWorld::total_bands() const {
  std::size_t n = 0;
  for (const auto& s : subsets) n += s.bands;
  return n;
}

std::vector<SubsetShape> profile_subsets(std::string_view profile) {
  const auto b10 = band_names({"B02", "B03", "B04", "B08"});
  const auto b20 = band_names({"B05", "B06", "B07", "B8A", "B11", "B12"});
  const auto b60 = band_names({"B01", "B09"});
  if (profile == "tiny") return {{4, 24, 24, b10}, {6, 12, 12, b20}, {2, 4, 4, b60}};
  if (profile == "bigearthnet") return {{4, 120, 120, b10}, {6, 60, 60, b20}, {2, 20, 20, b60}};
  throw UsageError("unknown profile '" + std::string(profile) + "' (expected tiny or bigearthnet)");
}

std::size_t profile_default_classes(std::string_view profile) {
  if (profile == "tiny") return 8;
  if (profile == "bigearthnet") return 43;
  throw UsageError("unknown profile '" + std::string(profile) + "'");
}

SyntheticWorld make_world(const SyntheticOptions& options) {
  SyntheticWorld world;
  world.subsets = profile_subsets(options.profile);
  const std::size_t classes = options.classes ? options.classes : profile_default_classes(options.profile);
  if (options.profile == "tiny" && classes > 16) throw UsageError("tiny profile supports at most 16 classes");
  if (classes < 1) throw UsageError("need at least one class");
  const std::size_t bands = world.total_bands();
  Rng rng(derive_seed(options.seed, "world"));

  // Signatures stay at least 0.5 apart (Euclidean) from each other and from
  // the background so the scene content is recoverable from patch means.
  auto far_enough = [&](const std::vector<float>& cand) {
    auto dist = [&](const std::vector<float>& o) {
      double d = 0;
      for (std::size_t b = 0; b < bands; ++b) d += (cand[b] - o[b]) * (cand[b] - o[b]);
      return std::sqrt(d);
    };
    if (dist(world.background) < 0.5) return false;
    return std::all_of(world.signatures.begin(), world.signatures.end(),
                       [&](const auto& s) { return dist(s) >= 0.5; });
  };
  world.background.assign(bands, 0.0f);
  while (world.signatures.size() < classes) {
    std::vector<float> sig(bands);
    for (auto& v : sig) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    if (far_enough(sig)) world.signatures.push_back(std::move(sig));
  }
  for (std::size_t c = 0; c < classes; ++c)
    world.footprints.emplace_back(1 + rng.below(2), 1 + rng.below(2));
  return world;
}

Sample synthesize_sample(const SyntheticWorld& world, const SyntheticOptions& options, std::size_t index) {
  Rng rng(derive_seed(options.seed, index));
  const std::size_t classes = world.signatures.size();
  const std::size_t g = world.grid;

  // Cell ownership on the grid: -1 = background.
  std::vector<int> owner(g * g, -1);
  std::vector<std::size_t> pool(classes);
  std::iota(pool.begin(), pool.end(), 0);
  rng.shuffle(std::span(pool));
  const std::size_t count = 1 + rng.below(std::min<std::size_t>(4, classes));
  Sample s;
  s.labels.assign(classes, 0);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t c = pool[n];
    const auto [fh, fw] = world.footprints[c];
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      const std::size_t r0 = rng.below(g - fh + 1), c0 = rng.below(g - fw + 1);
      bool free = true;
      for (std::size_t i = 0; i < fh; ++i)
        for (std::size_t j = 0; j < fw; ++j) free = free && owner[(r0 + i) * g + c0 + j] < 0;
      if (!free) continue;
      for (std::size_t i = 0; i < fh; ++i)
        for (std::size_t j = 0; j < fw; ++j) owner[(r0 + i) * g + c0 + j] = static_cast<int>(c);
      placed = true;
    }
    if (!placed) {
      std::vector<std::size_t> free_cells;
      for (std::size_t i = 0; i < owner.size(); ++i)
        if (owner[i] < 0) free_cells.push_back(i);
      if (free_cells.empty()) continue;
      owner[free_cells[rng.below(free_cells.size())]] = static_cast<int>(c);
    }
    s.labels[c] = 1;
  }

  std::size_t band_offset = 0;
  for (const auto& sub : world.subsets) {
    const std::size_t ch = sub.height / g, cw = sub.width / g;
    std::vector<float> values(sub.bands * sub.height * sub.width);
    for (std::size_t b = 0; b < sub.bands; ++b) {
      for (std::size_t y = 0; y < sub.height; ++y) {
        for (std::size_t x = 0; x < sub.width; ++x) {
          const int o = owner[(y / ch) * g + x / cw];
          const float base = o < 0 ? world.background[band_offset + b]
                                   : world.signatures[static_cast<std::size_t>(o)][band_offset + b];
          values[(b * sub.height + y) * sub.width + x] =
              base + static_cast<float>(options.noise * rng.normal());
        }
      }
    }
    s.subsets.push_back(Tensorf::from({sub.bands, sub.height, sub.width}, std::move(values)));
    band_offset += sub.bands;
  }
  std::ostringstream id;
  id << 's' << std::setw(6) << std::setfill('0') << index;
  s.id = id.str();
  return s;
}

DatasetManifest generate_synthetic(const fs::path& root, const SyntheticOptions& options) {
  if (options.n < 1) throw UsageError("--n must be at least 1");
  if (!(options.noise >= 0.0)) throw UsageError("noise must be non-negative");
  const SyntheticWorld world = make_world(options);
  SplitCounts counts = options.counts ? *options.counts
                                      : split_counts(options.n, options.train_frac, options.val_frac, options.test_frac);
  if (counts.train + counts.val + counts.test != options.n)
    throw UsageError("split counts must add up to n = " + std::to_string(options.n));

  std::error_code ec;
  fs::create_directories(root / "samples", ec);
  if (ec) throw UsageError("cannot create " + (root / "samples").string() + ": " + ec.message());

  DatasetManifest m;
  m.subsets = world.subsets;
  for (std::size_t c = 0; c < world.signatures.size(); ++c) {
    std::ostringstream name;
    name << "class_" << std::setw(2) << std::setfill('0') << c;
    m.class_names.push_back(name.str());
  }
  // Assignment of samples to splits is a seeded permutation.
  std::vector<std::size_t> order(options.n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(options.seed, "splits"));
  split_rng.shuffle(std::span(order));
  for (std::size_t i = 0; i < options.n; ++i) {
    const Sample s = synthesize_sample(world, options, order[i]);
    write_sample(sample_path(root, s.id), s);
    auto& dst = i < counts.train ? m.train : i < counts.train + counts.val ? m.val : m.test;
    dst.push_back(s.id);
  }
  for (auto* split : {&m.train, &m.val, &m.test}) std::sort(split->begin(), split->end());
  m.generator = GeneratorInfo{options.seed, options.profile, options.noise, options.n};
  write_manifest(manifest_path(root), m);
  return m;
}

std::vector<Sample> load_split(const fs::path& root, const DatasetManifest& manifest, std::string_view split) {
  const auto& ids = manifest.split(split);
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(read_sample(sample_path(root, id), manifest));
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, "shuffle"), epoch));
  rng.shuffle(std::span(order));
  return order;
}

}  // namespace mac
