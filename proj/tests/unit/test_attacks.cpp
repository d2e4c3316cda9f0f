#include <doctest.h>

#include <cmath>

#include "great/attacks.hpp"
#include "great/data.hpp"
#include "great/errors.hpp"
#include "support.hpp"

using great::Tensor;
namespace at = great::attacks;
namespace nn = great::nn;
namespace ad = great::ad;
namespace gt = great::testing;

namespace {

// p(y=1 | x) = sigmoid(w x + b) for x > 0, written as a 1-1-2 ReLU network.
struct Logistic {
  nn::ModelSpec spec = nn::make_mlp(1, {1}, 2);
  nn::ParamSet params;
  Logistic(double w, double b) {
    params = nn::init_params(spec, 0);
    params.params[0].value[0] = 1.0;
    params.params[1].value[0] = 0.0;
    params.params[2].value = Tensor({1, 2}, std::vector<double>{0.0, w});
    params.params[3].value = Tensor({2}, std::vector<double>{0.0, b});
  }
};

double mean_loss(const nn::ModelSpec& spec, const nn::ParamSet& p, const Tensor& x, const std::vector<int>& y) {
  ad::Tape tape;
  auto b = nn::bind(tape, p, false);
  return ad::softmax_cross_entropy(nn::forward(spec, p, b, tape.constant(x)).logits, y).value()[0];
}

}  // namespace

TEST_CASE("epsilon zero returns the input exactly") {
  auto spec = nn::make_mlp(3, {4}, 2);
  auto p = nn::init_params(spec, 1);
  auto x = gt::random_tensor({5, 3}, 2, 0, 1);
  std::vector<int> y = {0, 1, 0, 1, 1};
  for (auto norm : {at::Norm::Linf, at::Norm::L2}) {
    CHECK(at::fgsm(spec, p, x, y, at::fgsm_config(norm, 0.0)).perturbed == x);
    CHECK(at::pgd(spec, p, x, y, at::pgd_config(norm, 0.0, 5)).perturbed == x);
  }
}

TEST_CASE("logistic model moves against w for label 1") {
  Logistic m(2.0, -0.5);
  Tensor x({3, 1}, std::vector<double>{0.4, 0.5, 0.7});
  std::vector<int> y = {1, 1, 1};
  auto adv = at::fgsm(m.spec, m.params, x, y, at::fgsm_config(at::Norm::Linf, 0.1));
  for (std::size_t i = 0; i < 3; ++i) CHECK(adv.perturbed[i] == doctest::Approx(x[i] - 0.1).epsilon(1e-15));
  auto l2 = at::fgsm(m.spec, m.params, x, y, at::fgsm_config(at::Norm::L2, 0.1));
  for (std::size_t i = 0; i < 3; ++i) CHECK(l2.perturbed[i] == doctest::Approx(x[i] - 0.1).epsilon(1e-15));
}

TEST_CASE("linf fgsm saturates at interior points") {
  auto spec = nn::make_mlp(4, {8}, 3);
  auto p = nn::init_params(spec, 5);
  auto x = gt::random_tensor({6, 4}, 6, 0.3, 0.7);
  std::vector<int> y = {0, 1, 2, 0, 1, 2};
  const auto g = at::input_gradient(spec, p, x, y);
  auto adv = at::fgsm(spec, p, x, y, at::fgsm_config(at::Norm::Linf, 0.05));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(g[i]) > 1e-12) CHECK(std::abs(std::abs(adv.perturbed[i] - x[i]) - 0.05) <= 1e-12);
  }
}

TEST_CASE("pgd with one full step equals fgsm") {
  auto spec = nn::make_mlp(4, {8}, 3);
  auto p = nn::init_params(spec, 7);
  auto x = gt::random_tensor({6, 4}, 8, 0, 1);
  std::vector<int> y = {2, 1, 0, 0, 1, 2};
  for (auto norm : {at::Norm::Linf, at::Norm::L2}) {
    auto f = at::fgsm(spec, p, x, y, at::fgsm_config(norm, 0.3));
    auto g = at::pgd(spec, p, x, y, at::pgd_config(norm, 0.3, 1, 0.3));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(f.perturbed[i] - g.perturbed[i]) <= 1e-12);
  }
}

TEST_CASE("every pgd iterate stays in the ball and the range") {
  auto spec = nn::make_mlp(5, {8}, 2);
  auto p = nn::init_params(spec, 9);
  auto x = gt::random_tensor({10, 5}, 10, 0, 1);
  std::vector<int> y(10);
  for (std::size_t i = 0; i < 10; ++i) y[i] = static_cast<int>(i % 2);
  for (auto norm : {at::Norm::Linf, at::Norm::L2}) {
    std::size_t seen = 0;
    auto cfg = at::pgd_config(norm, 0.15, 20);
    cfg.random_start = true;
    cfg.seed = 3;
    at::pgd(spec, p, x, y, cfg, [&](std::size_t, const Tensor& it) {
      ++seen;
      for (std::size_t r = 0; r < 10; ++r) {
        CHECK(at::distance(it.row(r), x.row(r), norm) <= 0.15 + 1e-9);
        for (double v : it.row(r)) CHECK((v >= 0.0 && v <= 1.0));
      }
    });
    CHECK(seen == 20);
  }
}

TEST_CASE("l2 projection scales radially") {
  Tensor origin({1, 3}, std::vector<double>{0.5, 0.5, 0.5});
  Tensor cand({1, 3}, std::vector<double>{0.5 + 0.12, 0.5 - 0.16, 0.5});  // distance 0.2 = 2 eps
  at::project(cand, origin, at::Norm::L2, 0.1, 0.0, 1.0);
  CHECK(std::abs(at::distance(cand.row(0), origin.row(0), at::Norm::L2) - 0.1) <= 1e-9);
  CHECK(cand[0] == doctest::Approx(0.56).epsilon(1e-12));
  CHECK(cand[1] == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("zero-gradient samples are returned unperturbed") {
  auto spec = nn::make_mlp(2, {3}, 2);
  auto p = nn::init_params(spec, 2);
  for (auto& q : p.params) q.value.fill(0.0);
  auto x = gt::random_tensor({4, 2}, 3, 0, 1);
  std::vector<int> y = {0, 1, 0, 1};
  CHECK(at::fgsm(spec, p, x, y, at::fgsm_config(at::Norm::L2, 0.3)).perturbed == x);
  CHECK(at::pgd(spec, p, x, y, at::pgd_config(at::Norm::Linf, 0.3, 4)).perturbed == x);
}

TEST_CASE("config validation") {
  auto bad = at::fgsm_config(at::Norm::Linf, -0.1);
  CHECK_THROWS_AS(bad.validate(), great::ConfigError);
  auto steps = at::fgsm_config(at::Norm::Linf, 0.1);
  steps.steps = 3;
  CHECK_THROWS_AS(steps.validate(), great::ConfigError);
  CHECK_THROWS_AS(at::pgd_config(at::Norm::L2, 0.1, 5, 0.2).validate(), great::ConfigError);
  CHECK(at::pgd_config(at::Norm::L2, 0.2, 10).effective_step_size() == doctest::Approx(0.05));
  CHECK(at::pgd_config(at::Norm::L2, 0.2, 1).effective_step_size() == doctest::Approx(0.2));
  CHECK_THROWS_AS(at::method_from_string("cw"), great::ConfigError);
  CHECK(at::norm_from_string("l2") == at::Norm::L2);
}

TEST_CASE("non-finite gradients name the sample") {
  auto spec = nn::make_mlp(2, {3}, 2);
  auto p = nn::init_params(spec, 2);
  p.params[3].value[1] = std::nan("");
  auto x = gt::random_tensor({3, 2}, 3, 0, 1);
  std::vector<int> y = {0, 1, 0};
  try {
    at::fgsm(spec, p, x, y, at::fgsm_config(at::Norm::Linf, 0.1));
    FAIL("expected NumericError");
  } catch (const great::NumericError& e) {
    CHECK(std::string(e.what()).find("sample 0") != std::string::npos);
  }
}

TEST_CASE("small fgsm raises the mean loss of a trained model") {
  auto ds = great::data::make_two_moons(300, 0.1, 4);
  std::vector<int> y(ds.labels.begin(), ds.labels.end());
  auto spec = nn::make_mlp(2, {16, 16}, 2);
  auto p = nn::init_params(spec, 4);
  auto s = nn::make_optimizer(nn::OptimizerKind::Adam, 1e-2, p);
  for (int it = 0; it < 300; ++it) {
    ad::Tape tape;
    auto b = nn::bind(tape, p);
    tape.backward(ad::softmax_cross_entropy(nn::forward(spec, p, b, tape.constant(ds.features)).logits, y));
    nn::step(p, s, nn::gradients(b, p));
  }
  auto adv = at::fgsm(spec, p, ds.features, y, at::fgsm_config(at::Norm::Linf, 0.03));
  CHECK(mean_loss(spec, p, adv.perturbed, y) >= mean_loss(spec, p, ds.features, y));
}

TEST_CASE("randomized invariant sweep") {
  const auto r = gt::check_attack_invariants(200, 77);
  CAPTURE(r.first_failure);
  CHECK(r.cases == 200);
  CHECK(r.ok());
}
