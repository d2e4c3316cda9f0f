#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "great/errors.hpp"
#include "great/io.hpp"
#include "great/nn.hpp"
#include "great/random.hpp"
#include "support.hpp"

using great::Tensor;
namespace nn = great::nn;
namespace ad = great::ad;
namespace gt = great::testing;

namespace {

double train_loss(const nn::ModelSpec& spec, const nn::ParamSet& p, const Tensor& x, const std::vector<int>& y) {
  ad::Tape tape;
  auto b = nn::bind(tape, p, false);
  auto f = nn::forward(spec, p, b, tape.constant(x));
  return ad::softmax_cross_entropy(f.logits, y).value()[0];
}

}  // namespace

TEST_CASE("mlp spec shapes and embedding") {
  auto spec = nn::make_mlp(2, {32, 32}, 2);
  CHECK(spec.embedding_dim() == 32);
  CHECK(spec.output_shapes().back() == great::Shape{2});
  auto cnn = nn::make_cnn(14, 14, 1, 3);
  CHECK(cnn.output_shapes().back() == great::Shape{3});
  CHECK(cnn.embedding_dim() == 32);
  nn::CnnOptions ext;
  ext.extended = true;
  std::size_t convs = 0;
  for (auto& l : nn::make_cnn(20, 20, 1, 2, ext).layers) convs += l.kind == nn::LayerKind::Conv;
  CHECK(convs == 4);
}

TEST_CASE("invalid specs are rejected") {
  auto spec = nn::make_mlp(2, {4}, 2);
  spec.layers[0].out = 5;
  CHECK_THROWS_AS(spec.validate(), great::DimensionError);
  auto late = nn::make_mlp(2, {4}, 2);
  late.embedding_layer = late.layers.size() - 1;
  CHECK_THROWS_AS(late.validate(), great::ContractError);
}

TEST_CASE("zero final layer gives zero logits") {
  auto spec = nn::make_mlp(3, {5}, 4);
  auto p = nn::init_params(spec, 1);
  p.params[p.size() - 2].value.fill(0.0);
  auto out = nn::predict(spec, p, gt::random_tensor({6, 3}, 2, 0, 1));
  for (double v : out.logits.storage()) CHECK(v == 0.0);
}

TEST_CASE("eval forward is batch independent and pure") {
  auto spec = nn::make_cnn(6, 6, 1, 2, {{2}, false, 4, 0.25, true});
  auto p = nn::init_params(spec, 3);
  auto x = gt::random_tensor({8, 6, 6, 1}, 4, 0, 1);
  auto all = nn::predict(spec, p, x);
  std::vector<std::size_t> idx = {5};
  auto one = nn::predict(spec, p, x.select_rows(idx));
  for (std::size_t c = 0; c < 2; ++c) CHECK(one.logits.at(0, c) == all.logits.at(5, c));
  CHECK(nn::predict(spec, p, x).logits == all.logits);
}

TEST_CASE("initialization is seed deterministic") {
  auto spec = nn::make_mlp(2, {8, 8}, 2);
  CHECK(nn::init_params(spec, 9) == nn::init_params(spec, 9));
  CHECK_FALSE(nn::init_params(spec, 9) == nn::init_params(spec, 10));
  auto p = nn::init_params(spec, 9);
  auto x = gt::random_tensor({5, 2}, 1, 0, 1);
  CHECK(nn::predict(spec, p, x).logits == nn::predict(spec, p, x).logits);
}

TEST_CASE("dropout is active only in training mode") {
  auto spec = nn::make_cnn(6, 6, 1, 2, {{2}, false, 8, 0.5, false});
  auto p = nn::init_params(spec, 3);
  auto x = gt::random_tensor({4, 6, 6, 1}, 4, 0, 1);
  auto run = [&](bool training, std::uint64_t seed) {
    ad::Tape tape;
    auto b = nn::bind(tape, p, false);
    return nn::forward(spec, p, b, tape.constant(x), {training, seed}).logits.value();
  };
  CHECK(run(false, 1) == run(false, 2));
  CHECK(run(true, 1) == run(true, 1));
  CHECK_FALSE(run(true, 1) == run(true, 2));
}

TEST_CASE("sgd step example") {
  nn::ParamSet p;
  p.params.push_back({"w", Tensor({1}, 1.0), true});
  auto s = nn::make_optimizer(nn::OptimizerKind::Sgd, 0.1, p);
  nn::step(p, s, {Tensor({1}, 2.0)});
  CHECK(p.params[0].value[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("adam first step moves each coordinate by about lr") {
  nn::ParamSet p;
  p.params.push_back({"w", Tensor({4}, std::vector<double>{1, -2, 3, 0.5}), true});
  const auto before = p.params[0].value;
  auto s = nn::make_optimizer(nn::OptimizerKind::Adam, 1e-3, p);
  const Tensor g({4}, std::vector<double>{0.3, -7, 1e-2, 100});
  nn::step(p, s, {g});
  CHECK(s.timestep == 1);
  for (std::size_t j = 0; j < 4; ++j) {
    // Closed form: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
    const double expected = 1e-3 * g[j] / (std::abs(g[j]) + 1e-8);
    CHECK(std::abs((before[j] - p.params[0].value[j]) - expected) < 1e-15);
  }
  nn::step(p, s, {g});
  CHECK(s.timestep == 2);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto spec = nn::make_mlp(2, {3}, 2);
  auto p = nn::init_params(spec, 1);
  const auto before = p;
  for (auto kind : {nn::OptimizerKind::Sgd, nn::OptimizerKind::Adam}) {
    auto s = nn::make_optimizer(kind, 0.1, p);
    std::vector<Tensor> zeros;
    for (auto& q : p.params) zeros.emplace_back(q.value.shape(), 0.0);
    nn::step(p, s, zeros);
    CHECK(p == before);
  }
}

TEST_CASE("missing gradient is a contract error") {
  auto spec = nn::make_mlp(2, {3}, 2);
  auto p = nn::init_params(spec, 1);
  auto s = nn::make_optimizer(nn::OptimizerKind::Adam, 0.1, p);
  std::vector<Tensor> grads(p.size());
  CHECK_THROWS_AS(nn::step(p, s, grads), great::ContractError);
}

TEST_CASE("sgd separates a linearly separable toy set") {
  great::Rng rng(5);
  const std::size_t n = 64;
  Tensor x({n, 2});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    x.at(i, 0) = rng.uniform(0, 0.4) + (y[i] ? 0.6 : 0.0);
    x.at(i, 1) = rng.uniform(0, 1);
  }
  auto spec = nn::make_mlp(2, {8}, 2);
  auto p = nn::init_params(spec, 2);
  auto s = nn::make_optimizer(nn::OptimizerKind::Sgd, 0.5, p);
  for (int it = 0; it < 500; ++it) {
    ad::Tape tape;
    auto b = nn::bind(tape, p);
    auto f = nn::forward(spec, p, b, tape.constant(x));
    tape.backward(ad::softmax_cross_entropy(f.logits, y));
    nn::step(p, s, nn::gradients(b, p));
  }
  CHECK(train_loss(spec, p, x, y) < 0.1);
}

TEST_CASE("identical training runs agree to the bit") {
  auto run = [] {
    auto spec = nn::make_mlp(2, {6}, 2);
    auto p = nn::init_params(spec, 4);
    auto x = gt::random_tensor({16, 2}, 8, 0, 1);
    std::vector<int> y(16);
    for (std::size_t i = 0; i < 16; ++i) y[i] = x.at(i, 0) > 0.5;
    auto s = nn::make_optimizer(nn::OptimizerKind::Adam, 1e-2, p);
    for (int it = 0; it < 50; ++it) {
      ad::Tape tape;
      auto b = nn::bind(tape, p);
      auto f = nn::forward(spec, p, b, tape.constant(x));
      tape.backward(ad::softmax_cross_entropy(f.logits, y));
      nn::step(p, s, nn::gradients(b, p));
    }
    return train_loss(spec, p, x, y);
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is exact and truncation is rejected") {
  nn::Checkpoint c;
  c.spec = nn::make_cnn(6, 6, 1, 2, {{2}, false, 4, 0.25, true});
  c.params = nn::init_params(c.spec, 17);
  c.params.params[1].value[0] = 0.1 + 0.2;
  c.meta["mode"] = "great";
  const auto text = nn::checkpoint_to_json(c);
  auto back = nn::checkpoint_from_json(text);
  CHECK(back.spec == c.spec);
  CHECK(back.params == c.params);
  CHECK(back.meta == c.meta);
  CHECK(nn::checkpoint_to_json(back) == text);

  for (std::size_t cut : {std::size_t{0}, text.size() / 3, text.size() - 2}) {
    CHECK_THROWS_AS(nn::checkpoint_from_json(text.substr(0, cut)), great::ParseError);
  }

  const auto dir = std::filesystem::temp_directory_path() / "great_nn_ckpt";
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(c, dir / "c.json");
  CHECK(nn::load_checkpoint(dir / "c.json").params == c.params);
  CHECK_THROWS_AS(nn::load_checkpoint(dir / "none.json"), great::IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("forward rejects mismatched batches") {
  auto spec = nn::make_mlp(3, {4}, 2);
  auto p = nn::init_params(spec, 1);
  CHECK_THROWS_AS(nn::predict(spec, p, Tensor({2, 4}, 0.5)), great::DimensionError);
}
