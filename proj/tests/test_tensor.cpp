#include <doctest.h>

#include "mac/errors.hpp"
#include "mac/gradcheck.hpp"
#include "mac/ops.hpp"
#include "test_util.hpp"

using namespace mac;

TEST_CASE("construction checks element count") {
  CHECK_THROWS_AS(Tensord::from({2, 3}, std::vector<double>(5)), DimensionError);
  const auto t = Tensord::full({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.data()[5] == 1.5);
  CHECK(shape_str({2, 3}) == "[2x3]");
}

TEST_CASE("backward needs a scalar") {
  auto x = Tensord::from({2}, {1.0, 2.0}, true);
  auto y = scale(x, 3.0);
  CHECK_THROWS_AS(y.backward(), UsageError);
  sum(y).backward();
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == 3.0);
}

TEST_CASE("fan-out accumulates") {
  auto x = Tensord::from({1}, {0.7}, true);
  sum(add(x, x)).backward();
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("shared subexpression equals the sum over duplicated paths") {
  Rng rng(3);
  auto x = testing::random_tensor(rng, {4}, 1.0, true);
  auto shared = tanh(x);
  sum(mul(shared, sigmoid(shared))).backward();
  std::vector<double> gs(x.grad().begin(), x.grad().end());

  // Same function built from two independent copies of tanh(x).
  auto x2 = Tensord::from({4}, testing::values(x), true);
  sum(mul(tanh(x2), sigmoid(tanh(x2)))).backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(x2.grad()[i] == doctest::Approx(gs[i]).epsilon(1e-14));
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  auto x = Tensord::from({1}, {2.0}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  CHECK(x.grad()[0] == 8.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensord::from({1}, {2.0}, true);
  Tensord y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = mul(x, x);
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.item() == 4.0);
}

TEST_CASE("detach cuts the graph") {
  auto x = Tensord::from({1}, {3.0}, true);
  auto y = mul(x.detach(), x);
  sum(y).backward();
  CHECK(x.grad()[0] == 3.0);
}

TEST_CASE("topological order respects dependencies") {
  auto a = Tensord::from({1}, {1.0}, true);
  auto b = tanh(a);
  auto c = add(b, sigmoid(a));
  auto d = mul(c, b);
  const auto graph = Graph<double>::trace(sum(d));
  const auto& order = graph.nodes();
  auto pos = [&](const Tensord& t) {
    return std::find(order.begin(), order.end(), t.node()) - order.begin();
  };
  CHECK(pos(a) < pos(b));
  CHECK(pos(b) < pos(c));
  CHECK(pos(c) < pos(d));
}

TEST_CASE("deep chains do not overflow the stack") {
  auto x = Tensord::from({1}, {0.5}, true);
  Tensord y = x;
  for (int i = 0; i < 200000; ++i) y = scale(y, 1.0);
  sum(y).backward();
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("a corrupted backward rule is caught by the gradient check") {
  // Squares its input but reports the derivative as x instead of 2x.
  auto bad_square = [](const Tensord& x) {
    std::vector<double> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * x.data()[i];
    return Tensord::make_result("bad_square", x.shape(), std::move(y), {x}, [](Tensord::Node& n) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.parents[0]->data[i];
    });
  };
  Rng rng(5);
  auto x = testing::random_tensor(rng, {5});
  const auto report = gradcheck("bad_square", [&] { return sum(bad_square(x)); }, {{"x", x}});
  CHECK_FALSE(report.passed);
  CHECK(report.max_rel_error > 0.4);

  auto good = gradcheck("square", [&] { return sum(mul(x, x)); }, {{"x", x}});
  CHECK(good.passed);
}

TEST_CASE("relative error uses the floor for tiny gradients") {
  CHECK(relative_error(1.0, 1.0, 1e-6) == 0.0);
  CHECK(relative_error(2.0, 1.0, 1e-6) == doctest::Approx(0.5));
  CHECK(relative_error(1e-12, 0.0, 1e-6) == doctest::Approx(1e-6));
}

TEST_CASE("cast between precisions") {
  const auto d = Tensord::from({2}, {0.1, 0.2});
  const auto f = cast<float>(d);
  CHECK(f.data()[0] == 0.1f);
  CHECK(cast<double>(f).data()[1] == static_cast<double>(0.2f));
}
