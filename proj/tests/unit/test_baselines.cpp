#include <doctest.h>

#include <cmath>

#include "mtf/baselines.hpp"
#include "mtf/error.hpp"
#include "mtf/model.hpp"
#include "mtf/training.hpp"
#include "support.hpp"

using namespace mtf;

namespace {

BaselineConfig tiny(ModelKind kind) {
  BaselineConfig c = desk_preset(kind);
  c.grid_rows = 3;
  c.grid_cols = 3;
  c.services = 2;
  c.input_length = 3;
  c.horizon = 2;
  c.depth = 2;
  c.width = 4;
  c.embed_units = 3;
  if (kind == ModelKind::Cnn3d) c.head_channels = 2;
  return c;
}

// y = W x + b on plain vectors.
std::vector<double> dense(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
  std::vector<double> y(w.dim(0));
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < w.dim(1); ++c) acc += w[r * w.dim(1) + c] * x[c];
    y[r] = acc;
  }
  return y;
}

// Gives the running statistics and affine parameters non-trivial values.
void perturb_norms(ModelParams& params, Rng& rng) {
  for (auto& e : params.entries()) {
    const std::string& n = e.name;
    if (n.ends_with(".running_mean") || n.ends_with(".beta")) {
      for (double& v : e.value.data()) v = rng.uniform(-0.5, 0.5);
    } else if (n.ends_with(".running_var") || n.ends_with(".gamma")) {
      for (double& v : e.value.data()) v = rng.uniform(0.5, 1.5);
    }
  }
}

}  // namespace

TEST_CASE("model kinds round-trip through their names") {
  for (ModelKind k : {ModelKind::ConvLstm, ModelKind::Mlp, ModelKind::Cnn, ModelKind::Cnn3d, ModelKind::Lstm,
                      ModelKind::Persistence}) {
    CHECK(parse_model_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_model_kind("transformer"), ContractError);
  CHECK_FALSE(is_trainable(ModelKind::Persistence));
}

TEST_CASE("presets follow the layer table") {
  CHECK(full_scale_preset(ModelKind::Mlp).depth == 5);
  CHECK(full_scale_preset(ModelKind::Mlp).width == 500);
  CHECK(full_scale_preset(ModelKind::Cnn).depth == 11);
  CHECK(full_scale_preset(ModelKind::Cnn).width == 128);
  CHECK(full_scale_preset(ModelKind::Cnn3d).depth == 11);
  CHECK(full_scale_preset(ModelKind::Lstm).width == 500);
  CHECK(desk_preset(ModelKind::Cnn).depth == 4);
  CHECK(desk_preset(ModelKind::Cnn).width == 32);
  CHECK(desk_preset(ModelKind::Lstm).width == 64);
}

TEST_CASE("MLP forward matches a dense-layer oracle") {
  const BaselineConfig c = tiny(ModelKind::Mlp);
  ModelParams params = init_params(c);
  Rng rng(12);
  for (auto& e : params.entries())
    if (e.name.ends_with(".b")) e.value = test::random_tensor(rng, e.value.shape(), -0.2, 0.2);
  const Tensor input = test::random_tensor(rng, {3, 2, 3, 3});
  std::vector<double> x(input.data().begin(), input.data().end());
  for (std::size_t l = 0; l < c.depth; ++l) {
    x = dense(params.get("mlp.l" + std::to_string(l) + ".w"), params.get("mlp.l" + std::to_string(l) + ".b"), x);
    for (double& v : x) v = std::tanh(v);
  }
  const std::vector<double> want = dense(params.get("head.w"), params.get("head.b"), x);
  const Tensor got = forecast(ModelConfig{c}, params, input);
  CHECK(got.shape() == Shape{2, 2, 3, 3});
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("CNN forward matches a convolution and standardization oracle") {
  const BaselineConfig c = tiny(ModelKind::Cnn);
  ModelParams params = init_params(c);
  Rng rng(13);
  perturb_norms(params, rng);
  const Tensor input = test::random_tensor(rng, {3, 2, 3, 3});
  Tensor x = input.reshaped(Shape{6, 3, 3});
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::string p = "cnn.l" + std::to_string(l);
    x = test::naive_conv2d(x, params.get(p + ".w"), nullptr);
    const std::size_t inner = x.size() / x.dim(0);
    for (std::size_t ch = 0; ch < x.dim(0); ++ch) {
      const double m = params.get(p + ".norm.running_mean")[ch];
      const double v = params.get(p + ".norm.running_var")[ch];
      const double g = params.get(p + ".norm.gamma")[ch];
      const double b = params.get(p + ".norm.beta")[ch];
      for (std::size_t i = 0; i < inner; ++i) {
        double& e = x[ch * inner + i];
        e = std::tanh((e - m) / std::sqrt(v + c.norm_epsilon) * g + b);
      }
    }
  }
  const std::vector<double> flat(x.data().begin(), x.data().end());
  const std::vector<double> want = dense(params.get("head.w"), params.get("head.b"), flat);
  const Tensor got = forecast(ModelConfig{c}, params, input);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("3D CNN convolves over time with services as channels") {
  BaselineConfig c = tiny(ModelKind::Cnn3d);
  c.depth = 1;
  c.activation = Activation::Identity;
  const ModelParams params = init_params(c);
  Rng rng(14);
  const Tensor input = test::random_tensor(rng, {3, 2, 3, 3});
  Tensor swapped(Shape{2, 3, 3, 3});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t e = 0; e < 9; ++e) swapped[(s * 3 + t) * 9 + e] = input[(t * 2 + s) * 9 + e];
  Tensor x = test::naive_conv3d(swapped, params.get("cnn3d.l0.w"), nullptr);
  for (double& v : x.data()) v /= std::sqrt(1.0 + c.norm_epsilon);
  const std::vector<double> want =
      dense(params.get("head.w"), params.get("head.b"), std::vector<double>(x.data().begin(), x.data().end()));
  const Tensor got = forecast(ModelConfig{c}, params, input);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("baseline gradients match finite differences") {
  for (ModelKind kind : {ModelKind::Mlp, ModelKind::Cnn, ModelKind::Cnn3d, ModelKind::Lstm}) {
    CAPTURE(to_string(kind));
    BaselineConfig c = tiny(kind);
    c.seed = 5;
    const ModelConfig mc{c};
    ModelParams params = init_params(mc);
    Rng rng(15);
    perturb_norms(params, rng);
    const Tensor input = test::random_tensor(rng, {3, 2, 3, 3});
    const Tensor target = test::random_tensor(rng, {2, 2, 3, 3});
    std::vector<double> cells(9, 1.0);
    cells[4] = 0.0;
    const Tensor mask = loss_mask(cells, 2, 2);
    const std::vector<bool> forcing{true};
    const LossAndGradients ad = loss_and_gradients(mc, params, input, target, mask, forcing);
    const auto f = [&](const ModelParams& p) {
      Graph g;
      BoundParams bound(g, p);
      const NodeId t = g.constant(target);
      const ForwardPass fp = build_forward(g, mc, bound, g.constant(input), t, forcing);
      return g.value(g.masked_mse_loss(fp.output, t, g.constant(mask.reshaped(target.shape())))).item();
    };
    // A larger step keeps roundoff below the tolerance on gradients near 1e-8.
    const ParamGradients fd = finite_diff_gradient(f, params, 1e-4);
    CHECK(max_relative_error(ad.gradients, fd) < 1e-4);
    CHECK(ad.loss == doctest::Approx(f(params)).epsilon(1e-12));
  }
}

TEST_CASE("persistence repeats the last observed snapshot") {
  Tensor ramp(Shape{4, 1, 2, 2});
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i / 4);  // snapshot t holds t
  const Tensor out = persistence_forecast(ramp, 3);
  CHECK(out.shape() == Shape{3, 1, 2, 2});
  for (double v : out.data()) CHECK(v == 3.0);
  BaselineConfig pc;
  pc.kind = ModelKind::Persistence;
  pc.input_length = 4;
  pc.horizon = 3;
  pc.services = 1;
  pc.grid_rows = 2;
  pc.grid_cols = 2;
  CHECK(init_params(pc).size() == 0);
  CHECK(forecast(ModelConfig{pc}, ModelParams{}, ramp) == out);
}

TEST_CASE("baselines reject wrong input shapes") {
  const BaselineConfig c = tiny(ModelKind::Mlp);
  CHECK_THROWS_AS(forecast(ModelConfig{c}, init_params(c), Tensor(Shape{4, 2, 3, 3})), DimensionError);
  BaselineConfig even = tiny(ModelKind::Cnn);
  even.kernel_size = 2;
  CHECK_THROWS_AS(even.validate(), ContractError);
}

TEST_CASE("channel moments are population statistics") {
  Tensor x(Shape{2, 2}, std::vector<double>{1, 3, 5, 5});
  std::vector<double> mean, var;
  channel_moments(x, mean, var);
  CHECK(mean == std::vector<double>{2, 5});
  CHECK(var == std::vector<double>{1, 0});
}

TEST_CASE("running statistics move toward the batch moments during training") {
  const BaselineConfig c = tiny(ModelKind::Cnn);
  const ModelConfig mc{c};
  Rng rng(16);
  const Tensor grid = test::random_tensor(rng, {8, 2, 3, 3}, 2.0, 3.0);
  const WindowedDataset data(grid, std::vector<double>(9, 1.0), 3, 2, 1, 0, 300);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.lr = 0.0;
  const ModelParams initial = init_params(mc);
  const TrainResult r = train(mc, initial, data, nullptr, tc);
  for (const auto& e : initial.entries()) {
    CAPTURE(e.name);
    if (e.trainable) {
      CHECK(r.last.get(e.name) == e.value);
    }
  }
  CHECK_FALSE(r.last.get("cnn.l0.norm.running_mean") == initial.get("cnn.l0.norm.running_mean"));
}
