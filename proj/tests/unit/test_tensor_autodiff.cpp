#include <doctest.h>

#include <cmath>

#include "mtf/autodiff.hpp"
#include "mtf/error.hpp"
#include "mtf/ops.hpp"
#include "support.hpp"

using namespace mtf;

namespace {

// Checks d(sum(w * f(inputs)))/d(inputs) against central differences, where w
// is a fixed random weighting so every output element matters.
void check_gradients(const std::function<NodeId(Graph&, const std::vector<NodeId>&)>& build,
                     const std::vector<Tensor>& inputs, double tol = 1e-6) {
  Rng rng(99);
  Tensor weights;
  auto evaluate = [&](const std::vector<Tensor>& xs, Graph& g, std::vector<NodeId>& ids) {
    ids.clear();
    for (const Tensor& t : xs) ids.push_back(g.parameter(t));
    const NodeId out = build(g, ids);
    if (weights.size() != g.value(out).size() || weights.shape() != g.value(out).shape()) {
      weights = test::random_tensor(rng, g.value(out).shape());
    }
    return g.sum(g.hadamard(out, g.constant(weights)));
  };
  Graph g;
  std::vector<NodeId> ids;
  const NodeId loss = evaluate(inputs, g, ids);
  g.backward(loss);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto f = [&](const Tensor& probe) {
      std::vector<Tensor> xs = inputs;
      xs[i] = probe;
      Graph h;
      std::vector<NodeId> hid;
      return h.value(evaluate(xs, h, hid)).item();
    };
    const Tensor fd = finite_diff_gradient(f, inputs[i], 1e-6);
    const Tensor& ad = g.gradient(ids[i]);
    CAPTURE(i);
    CHECK(test::max_abs_diff(ad, fd) < tol);
  }
}

}  // namespace

TEST_CASE("tensor construction, indexing and reshape") {
  Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(t.at({1, 2}) == 6.0);
  CHECK(t.at({0, 1}) == 2.0);
  CHECK(t.reshaped(Shape{3, 2}).at({2, 0}) == 5.0);
  CHECK_THROWS_AS(t.reshaped(Shape{4, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK(Tensor::scalar(3.5).item() == 3.5);
  CHECK(Tensor::scalar(1.0).rank() == 0);
  Tensor bad(Shape{2}, std::vector<double>{1.0, NAN});
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("conv2d on a hand-computed example") {
  // 1 channel, 3x3 input 1..9, all-ones 3x3 kernel: each output sums its zero-padded neighbourhood.
  Tensor x(Shape{1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k(Shape{1, 1, 3, 3}, 1.0);
  Tensor bias(Shape{1}, std::vector<double>{0.5});
  const Tensor y = conv2d(x, k, &bias);
  const std::vector<double> want{12, 21, 16, 27, 45, 33, 24, 39, 28};
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(want[i] + 0.5));
}

TEST_CASE("conv2d and conv3d match direct loops") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = test::random_tensor(rng, Shape{3, 4, 5});
    const Tensor k = test::random_tensor(rng, Shape{2, 3, 3, 3});
    const Tensor b = test::random_tensor(rng, Shape{2});
    CHECK(test::max_abs_diff(conv2d(x, k, &b), test::naive_conv2d(x, k, &b)) < 1e-12);
    CHECK(test::max_abs_diff(conv2d(x, k), test::naive_conv2d(x, k, nullptr)) < 1e-12);

    const Tensor x3 = test::random_tensor(rng, Shape{2, 3, 4, 3});
    const Tensor k3 = test::random_tensor(rng, Shape{3, 2, 3, 1, 3});
    const Tensor b3 = test::random_tensor(rng, Shape{3});
    CHECK(test::max_abs_diff(conv3d(x3, k3, &b3), test::naive_conv3d(x3, k3, &b3)) < 1e-12);
  }
}

TEST_CASE("conv rejects even kernels and channel mismatches") {
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 3, 3}), Tensor(Shape{1, 1, 2, 2})), Error);
  CHECK_THROWS_AS(conv2d(Tensor(Shape{2, 3, 3}), Tensor(Shape{1, 1, 3, 3})), DimensionError);
}

TEST_CASE("matmul and elementwise ops") {
  Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor b(Shape{3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
  CHECK(hadamard(a, a)[5] == 36.0);
  CHECK(sub(a, a)[3] == 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(mse_loss(a, Tensor(Shape{2, 3}, 0.0)) == doctest::Approx(91.0 / 6.0));
  CHECK_THROWS_AS(add(a, b), DimensionError);
}

TEST_CASE("sigmoid and tanh stay finite and bounded for large inputs") {
  Tensor x(Shape{4}, std::vector<double>{-800.0, -30.0, 30.0, 800.0});
  const Tensor s = sigmoid(x), t = mtf::tanh(x);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::isfinite(s[i]));
    CHECK(s[i] >= 0.0);
    CHECK(s[i] <= 1.0);
    CHECK(std::abs(t[i]) <= 1.0);
  }
}

TEST_CASE("graph forward values agree with value-level ops") {
  Rng rng(5);
  const Tensor x = test::random_tensor(rng, Shape{2, 4, 4});
  const Tensor k = test::random_tensor(rng, Shape{3, 2, 3, 3});
  Graph g;
  const NodeId y = g.tanh(g.conv2d(g.constant(x), g.parameter(k)));
  CHECK(g.value(y) == mtf::tanh(conv2d(x, k)));
}

TEST_CASE("gradients of every op match finite differences") {
  Rng rng(11);
  SUBCASE("conv2d with bias") {
    check_gradients([](Graph& g, const auto& v) { return g.conv2d(v[0], v[1], v[2]); },
                    {test::random_tensor(rng, {2, 4, 3}), test::random_tensor(rng, {3, 2, 3, 3}),
                     test::random_tensor(rng, {3})});
  }
  SUBCASE("conv3d") {
    check_gradients([](Graph& g, const auto& v) { return g.conv3d(v[0], v[1], v[2]); },
                    {test::random_tensor(rng, {2, 3, 3, 2}), test::random_tensor(rng, {2, 2, 3, 3, 1}),
                     test::random_tensor(rng, {2})});
  }
  SUBCASE("hadamard, add, sub, scale") {
    check_gradients(
        [](Graph& g, const auto& v) { return g.scale(g.sub(g.hadamard(v[0], v[1]), g.add(v[0], v[1])), -1.5); },
        {test::random_tensor(rng, {2, 3}), test::random_tensor(rng, {2, 3})});
  }
  SUBCASE("sigmoid and tanh") {
    check_gradients([](Graph& g, const auto& v) { return g.sigmoid(g.tanh(v[0])); },
                    {test::random_tensor(rng, {5}, -3.0, 3.0)});
  }
  SUBCASE("matmul") {
    check_gradients([](Graph& g, const auto& v) { return g.matmul(v[0], v[1]); },
                    {test::random_tensor(rng, {3, 4}), test::random_tensor(rng, {4, 2})});
  }
  SUBCASE("mse and masked mse") {
    const Tensor mask(Shape{2, 3}, std::vector<double>{1, 0, 1, 1, 1, 0});
    check_gradients(
        [&](Graph& g, const auto& v) {
          const NodeId m = g.constant(mask);
          return g.add(g.mse_loss(v[0], v[1]), g.masked_mse_loss(v[0], v[1], m));
        },
        {test::random_tensor(rng, {2, 3}), test::random_tensor(rng, {2, 3})});
  }
  SUBCASE("reshape, concat, slice, swap") {
    check_gradients(
        [](Graph& g, const auto& v) {
          const NodeId parts[] = {v[0], g.slice(v[1], 1, 2)};
          const NodeId joined = g.concat(parts);                // [4, 3]
          return g.swap_leading_axes(g.reshape(joined, {2, 2, 3}));
        },
        {test::random_tensor(rng, {2, 3}), test::random_tensor(rng, {3, 3})});
  }
  SUBCASE("channel affine") {
    check_gradients([](Graph& g, const auto& v) { return g.channel_affine(v[0], v[1], v[2]); },
                    {test::random_tensor(rng, {3, 2, 2}), test::random_tensor(rng, {3}),
                     test::random_tensor(rng, {3})});
  }
}

TEST_CASE("masked mse ignores masked elements") {
  Graph g;
  const NodeId p = g.parameter(Tensor(Shape{3}, std::vector<double>{1, 2, 100}));
  const NodeId t = g.constant(Tensor(Shape{3}, std::vector<double>{0, 0, 0}));
  const NodeId m = g.constant(Tensor(Shape{3}, std::vector<double>{1, 1, 0}));
  const NodeId loss = g.masked_mse_loss(p, t, m);
  CHECK(g.value(loss).item() == doctest::Approx(2.5));
  g.backward(loss);
  CHECK(g.gradient(p)[2] == 0.0);
  CHECK(g.gradient(p)[0] == doctest::Approx(1.0));
}

TEST_CASE("backward accumulates over shared nodes and is repeatable") {
  Graph g;
  const NodeId x = g.parameter(Tensor::scalar(3.0));
  const NodeId y = g.hadamard(x, x);  // x^2
  const NodeId z = g.add(y, x);       // x^2 + x
  g.backward(z);
  CHECK(g.gradient(x).item() == doctest::Approx(7.0));
  g.backward(z);
  CHECK(g.gradient(x).item() == doctest::Approx(7.0));
}

TEST_CASE("unreached parameters get zero gradients and other unreached nodes are an error") {
  Graph g;
  const NodeId x = g.parameter(Tensor::scalar(1.0));
  const NodeId unused = g.parameter(Tensor::scalar(2.0));
  const NodeId dangling = g.scale(unused, 3.0);
  g.backward(g.scale(x, 2.0));
  CHECK(g.gradient(unused).item() == 0.0);
  CHECK_THROWS_AS(g.gradient(dangling), ContractError);
  CHECK_THROWS_AS(g.backward(g.parameter(Tensor(Shape{2}))), Error);
}
