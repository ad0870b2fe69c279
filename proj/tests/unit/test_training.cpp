#include <doctest.h>

#include <cmath>

#include "mtf/checkpoint.hpp"
#include "mtf/error.hpp"
#include "mtf/model.hpp"
#include "mtf/training.hpp"
#include "support.hpp"

using namespace mtf;

namespace {

ModelConfig small_model(ModelKind kind) {
  ModelConfig c = default_model_config(kind);
  c.set_shape(2, 3, 3, 3, 2);
  if (auto* s = std::get_if<S2SConfig>(&c.spec)) {
    s->embed_channels = 3;
    s->hidden_channels = {3};
  } else {
    auto& b = std::get<BaselineConfig>(c.spec);
    b.depth = 2;
    b.width = 4;
    b.embed_units = 4;
  }
  return c;
}

WindowedDataset random_dataset(Rng& rng, std::size_t T) {
  return WindowedDataset(test::random_tensor(rng, {T, 2, 3, 3}), std::vector<double>(9, 1.0), 3, 2, 1, 0, 300);
}

}  // namespace

TEST_CASE("Adam first step on a scalar moves by the learning rate") {
  ModelParams p;
  p.add("w", Tensor::scalar(0.5));
  AdamState st;
  st.config.lr = 1e-3;
  adam_step(p, {{"w", Tensor::scalar(1.0)}}, st);
  // m_hat = v_hat = 1, so the update is lr / (1 + eps).
  CHECK(p.get("w").item() == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(st.step == 1);
}

TEST_CASE("Adam leaves parameters alone for zero gradients") {
  ModelParams p;
  p.add("w", Tensor(Shape{3}, 2.0));
  p.add("frozen", Tensor(Shape{1}, 4.0), false);
  AdamState st;
  adam_step(p, {{"w", Tensor(Shape{3}, 0.0)}}, st);
  CHECK(p.get("w") == Tensor(Shape{3}, 2.0));
  CHECK(st.step == 1);
  CHECK_THROWS_AS(adam_step(p, {}, st), ContractError);
  CHECK_THROWS_AS(adam_step(p, {{"w", Tensor(Shape{2}, 0.0)}}, st), ContractError);
}

TEST_CASE("Adam matches a direct transcription over several steps") {
  ModelParams p;
  p.add("w", Tensor(Shape{2}, std::vector<double>{1.0, -2.0}));
  AdamState st;
  st.config.lr = 0.1;
  double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -2.0};
  for (int t = 1; t <= 5; ++t) {
    const double g[2] = {w[0] * 2.0, std::sin(w[1])};
    adam_step(p, {{"w", Tensor(Shape{2}, std::vector<double>{g[0], g[1]})}}, st);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(p.get("w")[0] == doctest::Approx(w[0]).epsilon(1e-12));
  CHECK(p.get("w")[1] == doctest::Approx(w[1]).epsilon(1e-12));
}

TEST_CASE("learning rate zero leaves trainable parameters unchanged") {
  Rng rng(61);
  const WindowedDataset data = random_dataset(rng, 12);
  for (ModelKind kind : {ModelKind::ConvLstm, ModelKind::Mlp, ModelKind::Lstm}) {
    const ModelConfig mc = small_model(kind);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 3;
    tc.lr = 0.0;
    const ModelParams initial = init_params(mc);
    const TrainResult r = train(mc, initial, data, nullptr, tc);
    CHECK(r.last == initial);
    CHECK(r.history.size() == 2);
  }
}

TEST_CASE("a constant target is fitted within 200 steps") {
  const ModelConfig mc = small_model(ModelKind::Mlp);
  const std::size_t T = 40;
  Tensor grid(Shape{T, 2, 3, 3}, 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = (i / 9) % 2 == 0 ? 0.5 : -0.25;
  const WindowedDataset data(grid, std::vector<double>(9, 1.0), 3, 2, 1, 0, 300);
  TrainConfig tc;
  tc.epochs = 100;
  tc.batch_size = 19;
  tc.lr = 1e-2;
  tc.max_steps = 200;
  const TrainResult r = train(mc, init_params(mc), data, nullptr, tc);
  CHECK(r.history.back().steps <= 200);
  CHECK(r.history.back().train_loss < 1e-4);
}

TEST_CASE("training is bit-identical across runs and worker counts") {
  Rng rng(62);
  const WindowedDataset data = random_dataset(rng, 16);
  const WindowedDataset val = random_dataset(rng, 8);
  const ModelConfig mc = small_model(ModelKind::ConvLstm);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  tc.tf_prob = 0.5;
  const TrainResult a = train(mc, init_params(mc), data, &val, tc);
  tc.threads = 3;
  const TrainResult b = train(mc, init_params(mc), data, &val, tc);
  CHECK(a.history == b.history);
  CHECK(a.best == b.best);
  CHECK(a.adam == b.adam);
  CHECK(std::isfinite(a.history.back().validation_loss));
}

TEST_CASE("best parameters track the lowest validation loss and patience stops early") {
  Rng rng(63);
  const WindowedDataset data = random_dataset(rng, 14);
  const WindowedDataset val = random_dataset(rng, 8);
  const ModelConfig mc = small_model(ModelKind::Cnn);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 4;
  tc.lr = 0.05;
  tc.patience = 1;
  std::size_t calls = 0;
  const TrainResult r = train(mc, init_params(mc), data, &val, tc,
                              [&](const EpochRecord&, const ModelParams&, bool) { ++calls; });
  CHECK(calls == r.history.size());
  double best = INFINITY;
  std::size_t best_epoch = 0;
  for (const EpochRecord& e : r.history)
    if (e.validation_loss < best) {
      best = e.validation_loss;
      best_epoch = e.epoch;
    }
  CHECK(r.best_epoch == best_epoch);
  CHECK(dataset_loss(mc, r.best, val) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("non-finite losses abort training") {
  const ModelConfig mc = small_model(ModelKind::Mlp);
  Tensor grid(Shape{8, 2, 3, 3}, 1.0);
  grid[20] = NAN;
  const WindowedDataset data(grid, std::vector<double>(9, 1.0), 3, 2, 1, 0, 300);
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(mc, init_params(mc), data, nullptr, tc), NumericalError);
}

TEST_CASE("loss mask broadcasts cells over steps and services") {
  const Tensor m = loss_mask({1, 0, 1, 1}, 2, 3);
  CHECK(m.size() == 2 * 3 * 4);
  CHECK(m[(1 * 3 + 2) * 4 + 1] == 0.0);
  CHECK(m[(1 * 3 + 2) * 4 + 3] == 1.0);
  CHECK(m[0] == 1.0);
}

TEST_CASE("persistence evaluates perfectly on constant traffic") {
  ModelConfig mc = default_model_config(ModelKind::Persistence);
  mc.set_shape(2, 3, 3, 3, 2);
  const Tensor grid(Shape{10, 2, 3, 3}, 0.7);
  const WindowedDataset data(grid, std::vector<double>(9, 1.0), 3, 2, 1, 0, 300);
  NormalizationStats stats{{100.0, 50.0}, {10.0, 5.0}};
  // Only one service per category so constant-span terms are excluded, not fatal.
  std::vector<ServiceInfo> services{{"a", "a", "web"}, {"b", "b", "chat"}};
  Tensor varied = grid;
  for (std::size_t t = 0; t < 10; ++t) varied[t * 18] = 0.7 + 0.1 * double(t);
  const WindowedDataset vdata(varied, std::vector<double>(9, 1.0), 3, 2, 1, 0, 300);
  const EvalReport constant = evaluate(mc, ModelParams{}, data, stats, services);
  CHECK(constant.mae == 0.0);
  CHECK(std::abs(constant.ssim - 1.0) < 1e-12);
  CHECK(constant.mae_per_step.size() == 2);
  const EvalReport again = evaluate(mc, ModelParams{}, vdata, stats, services);
  CHECK(again.mae > 0.0);
  CHECK(evaluate(mc, ModelParams{}, vdata, stats, services, 2).mae == again.mae);
}

TEST_CASE("checkpoints round-trip bit-identically") {
  const ModelConfig mc = small_model(ModelKind::Cnn);
  Rng rng(64);
  ModelParams params = init_params(mc);
  for (auto& e : params.entries())
    for (double& v : e.value.data()) v += rng.uniform(-1e-3, 1e-3) * 1.2345678901234567;
  AdamState adam;
  adam.step = 7;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    adam.m[e.name] = test::random_tensor(rng, e.value.shape());
    adam.v[e.name] = test::random_tensor(rng, e.value.shape(), 0.0, 1.0);
  }
  Checkpoint ck{mc, params, NormalizationStats{{1.5, 2.5}, {0.25, 1e-8}}, {{"data_hash", "abc"}}, adam};
  const auto dir = test::scratch_dir("checkpoint_roundtrip");
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.params == params);
  CHECK(back.stats == ck.stats);
  CHECK(back.metadata == ck.metadata);
  REQUIRE(back.adam.has_value());
  CHECK(*back.adam == adam);
  CHECK(config_hash(back.model) == config_hash(mc));
  save_checkpoint(back, (dir / "again.ckpt").string());
  CHECK(test::read_file(path) == test::read_file(dir / "again.ckpt"));

  // evaluate(load(save(m))) equals evaluate(m)
  const WindowedDataset data = random_dataset(rng, 10);
  std::vector<ServiceInfo> services{{"a", "a", "web"}, {"b", "b", "chat"}};
  CHECK(evaluate(mc, params, data, ck.stats, services).mae == evaluate(back.model, back.params, data, back.stats, services).mae);
}

TEST_CASE("damaged checkpoints are refused") {
  const ModelConfig mc = small_model(ModelKind::Mlp);
  const auto dir = test::scratch_dir("checkpoint_damage");
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(Checkpoint{mc, init_params(mc), NormalizationStats{{0, 0}, {1, 1}}, {}, std::nullopt}, path);
  const std::string bytes = test::read_file(path);

  test::write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint((dir / "short.ckpt").string()), CheckpointError);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  test::write_file(dir / "flipped.ckpt", flipped);
  CHECK_THROWS_AS(load_checkpoint((dir / "flipped.ckpt").string()), CheckpointError);

  std::string version = bytes;
  version[8] = 9;  // u32 version follows the 8-byte magic
  test::write_file(dir / "version.ckpt", version);
  try {
    load_checkpoint((dir / "version.ckpt").string());
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  test::write_file(dir / "junk.ckpt", "not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), Error);
}

TEST_CASE("model configs survive JSON and hash by content") {
  for (ModelKind kind : {ModelKind::ConvLstm, ModelKind::Mlp, ModelKind::Cnn, ModelKind::Cnn3d, ModelKind::Lstm,
                         ModelKind::Persistence}) {
    const ModelConfig mc = small_model(kind);
    const ModelConfig back = model_config_from_json(to_json(mc));
    CHECK(to_json(back) == to_json(mc));
    CHECK(config_hash(back) == config_hash(mc));
  }
  ModelConfig a = small_model(ModelKind::Cnn), b = a;
  b.set_seed(a.seed() + 1);
  CHECK(config_hash(a) != config_hash(b));
  CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"kind", "bogus"}}), ContractError);
}
