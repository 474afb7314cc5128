#include "mac/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mac/errors.hpp"
#include "mac/ops.hpp"
#include "mac/rng.hpp"

namespace mac {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradcheckReport gradcheck(const std::string& label, const std::function<Tensor<double>()>& loss,
                          std::vector<NamedParameter<double>> inputs, const GradcheckOptions& options) {
  for (auto& in : inputs) {
    in.tensor.set_requires_grad(true);
    in.tensor.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) {
    auto g = in.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  NoGradGuard no_grad;
  GradcheckReport report;
  report.label = label;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].tensor.data();
    GradcheckEntry entry;
    entry.name = inputs[k].name;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = loss().item();
      values[i] = saved - options.step;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double err = relative_error(analytic[k][i], numeric, options.floor);
      if (err > entry.max_rel_error || entry.checked == 0) {
        entry.max_rel_error = std::max(entry.max_rel_error, err);
        entry.worst_index = i;
        entry.analytic = analytic[k][i];
        entry.numeric = numeric;
      }
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  const auto branch = [](std::vector<std::string> bands, std::size_t k1, std::size_t k, bool pool1, bool pool2) {
    BranchSpec b;
    b.band_indices = std::move(bands);
    b.layers = {{k1, 2, pool1}, {k, 4, pool2}, {k, 8, false}, {k, 4, false}};
    b.fc_out = 4;
    return b;
  };
  c.branches = {branch({"B02", "B03"}, 5, 3, true, true), branch({"B05", "B06", "B11"}, 3, 3, true, false),
                branch({"B01", "B09"}, 2, 2, false, false)};
  c.inputs = {{2, 12, 12, {}}, {3, 6, 6, {}}, {2, 4, 4, {}}};
  c.patches = 4;
  c.descriptor_width = 6;
  c.hidden = 5;
  c.attention_width = 3;
  c.attention_heads = 2;
  c.num_classes = 3;
  return c;
}

std::vector<Sample> random_samples(const ModelConfig& config, std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random_samples"));
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "rand" + std::to_string(i);
    for (const auto& in : config.inputs) {
      std::vector<float> v(in.bands * in.height * in.width);
      for (auto& x : v) x = static_cast<float>(rng.normal());
      s.subsets.push_back(Tensorf::from({in.bands, in.height, in.width}, std::move(v)));
    }
    s.labels.assign(config.num_classes, 0);
    s.labels[rng.below(config.num_classes)] = 1;
    for (auto& l : s.labels)
      if (rng.uniform01() < 0.3) l = 1;
    out.push_back(std::move(s));
  }
  return out;
}

GradcheckReport gradcheck_model(const ModelConfig& config, std::uint64_t seed, const GradcheckOptions& options) {
  Model<double> model(config, seed);
  // Zero biases leave units whose inputs are all zero sitting exactly on the
  // ReLU kink, where central differences see half the slope. Checking at a
  // generic point avoids that.
  Rng rng(derive_seed(seed, "gradcheck_biases"));
  for (auto& p : model.parameters())
    if (p.tensor.rank() == 1)
      for (auto& v : p.tensor.data()) v = 0.1 * rng.normal();
  const auto samples = random_samples(config, 2, seed);
  std::vector<const Sample*> batch{&samples[0], &samples[1]};
  const auto loss = [&] { return model.loss(model.forward(batch), batch); };
  return gradcheck("end-to-end model", loss, model.parameters(), options);
}

namespace {

Tensord random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensord::from(std::move(shape), std::move(v), true);
}

// Weighted sum with fixed random weights, so every output element carries a
// distinct gradient.
Tensord probe(const Tensord& y, const Tensord& weights) {
  return sum(mul(y, weights));
}

}  // namespace

std::vector<GradcheckReport> module_gradchecks(std::uint64_t seed, const GradcheckOptions& options) {
  Rng rng(derive_seed(seed, "module_gradchecks"));
  std::vector<GradcheckReport> reports;

  {
    auto x = random_tensor(rng, {2, 6, 6});
    auto k = random_tensor(rng, {3, 2, 3, 3});
    auto b = random_tensor(rng, {3});
    auto w = random_tensor(rng, {3, 6, 6});
    reports.push_back(gradcheck("conv2d 3x3", [&] { return probe(conv2d(x, k, b), w); },
                                {{"x", x}, {"kernels", k}, {"bias", b}}, options));
  }
  {
    auto x = random_tensor(rng, {2, 2, 5, 5});
    auto k = random_tensor(rng, {3, 2, 2, 2});
    auto b = random_tensor(rng, {3});
    auto w = random_tensor(rng, {2, 3, 5, 5});
    reports.push_back(gradcheck("conv2d 2x2 batched", [&] { return probe(conv2d(x, k, b), w); },
                                {{"x", x}, {"kernels", k}, {"bias", b}}, options));
  }
  {
    auto x = random_tensor(rng, {2, 5, 7});
    auto w = random_tensor(rng, {2, 2, 3});
    reports.push_back(gradcheck("maxpool2", [&] { return probe(maxpool2(x), w); }, {{"x", x}}, options));
  }
  {
    auto x = random_tensor(rng, {3, 5});
    auto wt = random_tensor(rng, {4, 5});
    auto b = random_tensor(rng, {4});
    auto w = random_tensor(rng, {3, 4});
    reports.push_back(gradcheck("fc", [&] { return probe(fc(x, wt, b), w); },
                                {{"x", x}, {"weight", wt}, {"bias", b}}, options));
  }
  {
    auto a = random_tensor(rng, {4, 5});
    auto b = random_tensor(rng, {5, 3});
    auto w = random_tensor(rng, {4, 3});
    reports.push_back(gradcheck("matmul", [&] { return probe(matmul(a, b), w); }, {{"a", a}, {"b", b}}, options));
  }
  {
    auto x = random_tensor(rng, {3, 5});
    auto w = random_tensor(rng, {3, 5});
    reports.push_back(gradcheck("softmax_rows", [&] { return probe(softmax_rows(x), w); }, {{"x", x}}, options));
  }
  {
    const std::size_t d = 4, h = 3, batch = 2;
    LstmParams<double> p{random_tensor(rng, {h, d}, 0.5), random_tensor(rng, {h, d}, 0.5),
                         random_tensor(rng, {h, d}, 0.5), random_tensor(rng, {h, d}, 0.5),
                         random_tensor(rng, {h, h}, 0.5), random_tensor(rng, {h, h}, 0.5),
                         random_tensor(rng, {h, h}, 0.5), random_tensor(rng, {h, h}, 0.5),
                         random_tensor(rng, {h}, 0.5),    random_tensor(rng, {h}, 0.5),
                         random_tensor(rng, {h}, 0.5),    random_tensor(rng, {h}, 0.5)};
    auto x = random_tensor(rng, {batch, d});
    auto h0 = random_tensor(rng, {batch, h});
    auto c0 = random_tensor(rng, {batch, h});
    auto wh = random_tensor(rng, {batch, h});
    auto wc = random_tensor(rng, {batch, h});
    reports.push_back(gradcheck(
        "lstm_cell",
        [&] {
          const auto s = lstm_cell(x, h0, c0, p);
          return add(probe(s.h, wh), probe(s.c, wc));
        },
        {{"x", x}, {"h_prev", h0}, {"c_prev", c0}, {"W_f", p.w_f}, {"W_i", p.w_i}, {"W_o", p.w_o},
         {"W_c", p.w_c}, {"U_f", p.u_f}, {"U_i", p.u_i}, {"U_o", p.u_o}, {"U_c", p.u_c}, {"b_f", p.b_f},
         {"b_i", p.b_i}, {"b_o", p.b_o}, {"b_c", p.b_c}},
        options));

    std::vector<Tensord> seq;
    std::vector<NamedParameter<double>> inputs;
    for (std::size_t r = 0; r < 4; ++r) {
      seq.push_back(random_tensor(rng, {batch, d}));
      inputs.push_back({"psi" + std::to_string(r), seq.back()});
    }
    LstmParams<double> q{random_tensor(rng, {h, d}, 0.5), random_tensor(rng, {h, d}, 0.5),
                         random_tensor(rng, {h, d}, 0.5), random_tensor(rng, {h, d}, 0.5),
                         random_tensor(rng, {h, h}, 0.5), random_tensor(rng, {h, h}, 0.5),
                         random_tensor(rng, {h, h}, 0.5), random_tensor(rng, {h, h}, 0.5),
                         random_tensor(rng, {h}, 0.5),    random_tensor(rng, {h}, 0.5),
                         random_tensor(rng, {h}, 0.5),    random_tensor(rng, {h}, 0.5)};
    std::vector<Tensord> weights;
    for (std::size_t r = 0; r < 4; ++r) weights.push_back(random_tensor(rng, {batch, 2 * h}));
    inputs.push_back({"fwd.W_i", p.w_i});
    inputs.push_back({"bwd.U_c", q.u_c});
    inputs.push_back({"bwd.b_o", q.b_o});
    reports.push_back(gradcheck(
        "bidirectional_pass",
        [&] {
          const auto phi = bidirectional_pass<double>(seq, {p}, {q});
          Tensord total = probe(phi[0], weights[0]);
          for (std::size_t r = 1; r < phi.size(); ++r) total = add(total, probe(phi[r], weights[r]));
          return total;
        },
        inputs, options));
  }
  {
    auto omega = random_tensor(rng, {8, 4});
    AttentionParams<double> p{random_tensor(rng, {3, 8}), random_tensor(rng, {2, 3})};
    auto w = random_tensor(rng, {8, 2});
    reports.push_back(gradcheck("attention", [&] { return probe(pool_descriptors(omega, attention_scores(omega, p)), w); },
                                {{"Omega", omega}, {"W_a1", p.w1}, {"W_a2", p.w2}}, options));
  }
  {
    auto z = random_tensor(rng, {2, 5});
    const std::vector<std::uint8_t> y{1, 0, 0, 1, 1, 0, 1, 0, 0, 0};
    reports.push_back(gradcheck("bce from logits", [&] { return bce_loss_logits(z, std::span<const std::uint8_t>(y)); },
                                {{"z", z}}, options));
    auto z2 = random_tensor(rng, {2, 5});
    reports.push_back(gradcheck("bce from probabilities",
                                [&] { return bce_loss(posteriors(z2), std::span<const std::uint8_t>(y)); },
                                {{"z", z2}}, options));
  }
  return reports;
}

std::string format_report(const GradcheckReport& report) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: %s (max relative error %.3e)\n", report.label.c_str(),
                report.passed ? "PASS" : "FAIL", report.max_rel_error);
  os << buf;
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "  %-28s n=%-6zu max_rel=%.3e  (analytic %.6e, numeric %.6e at %zu)\n",
                  e.name.c_str(), e.checked, e.max_rel_error, e.analytic, e.numeric, e.worst_index);
    os << buf;
  }
  return os.str();
}

}  // namespace mac
