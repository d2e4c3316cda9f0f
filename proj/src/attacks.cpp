#include "great/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "great/errors.hpp"
#include "great/random.hpp"

namespace great::attacks {

std::string to_string(Method method) { return method == Method::Fgsm ? "fgsm" : "pgd"; }
std::string to_string(Norm norm) { return norm == Norm::Linf ? "linf" : "l2"; }

Method method_from_string(const std::string& name) {
  if (name == "fgsm") return Method::Fgsm;
  if (name == "pgd") return Method::Pgd;
  throw ConfigError("unknown attack method '" + name + "'");
}

Norm norm_from_string(const std::string& name) {
  if (name == "linf") return Norm::Linf;
  if (name == "l2") return Norm::L2;
  throw ConfigError("unknown attack norm '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (method == Method::Fgsm && steps != 1) throw ConfigError("fgsm requires steps == 1");
  if (step_size < 0.0) throw ConfigError("attack step_size must be >= 0");
  if (method == Method::Pgd && step_size > epsilon) {
    throw ConfigError("pgd step_size exceeds epsilon");
  }
  if (!(clip_min < clip_max)) throw ConfigError("attack clip range is empty");
}

double AttackConfig::effective_step_size() const {
  if (method == Method::Fgsm) return epsilon;
  if (step_size > 0.0) return step_size;
  return std::min(epsilon, 2.5 * epsilon / static_cast<double>(steps));
}

AttackConfig fgsm_config(Norm norm, double epsilon) {
  AttackConfig c;
  c.method = Method::Fgsm;
  c.norm = norm;
  c.epsilon = epsilon;
  return c;
}

AttackConfig pgd_config(Norm norm, double epsilon, std::size_t steps, double step_size) {
  AttackConfig c;
  c.method = Method::Pgd;
  c.norm = norm;
  c.epsilon = epsilon;
  c.steps = steps;
  c.step_size = step_size;
  return c;
}

Tensor input_gradient(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                      std::span<const int> y) {
  ad::Tape tape;
  const nn::Bound bound = nn::bind(tape, params, false);
  ad::Var input = tape.variable(x);
  const auto out = nn::forward(spec, params, bound, input);
  ad::Var loss = ad::scale(ad::softmax_cross_entropy(out.logits, y), static_cast<double>(x.rows()));
  tape.backward(loss);
  Tensor g = input.grad();
  const std::size_t w = g.row_size();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t j = 0; j < w; ++j) {
      if (!std::isfinite(g[r * w + j])) {
        throw NumericError("non-finite input gradient at sample " + std::to_string(r));
      }
    }
  }
  return g;
}

double distance(std::span<const double> a, std::span<const double> b, Norm norm) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::fabs(a[i] - b[i]);
    if (norm == Norm::Linf) {
      acc = std::max(acc, d);
    } else {
      acc += d * d;
    }
  }
  return norm == Norm::Linf ? acc : std::sqrt(acc);
}

void project(Tensor& candidate, const Tensor& origin, Norm norm, double epsilon, double clip_min,
             double clip_max) {
  if (candidate.shape() != origin.shape()) throw DimensionError("project: shape mismatch");
  const std::size_t w = candidate.row_size();
  for (std::size_t r = 0; r < candidate.rows(); ++r) {
    auto c = candidate.row(r);
    auto o = origin.row(r);
    if (norm == Norm::Linf) {
      for (std::size_t j = 0; j < w; ++j) c[j] = std::clamp(c[j], o[j] - epsilon, o[j] + epsilon);
    } else {
      const double d = distance(c, o, Norm::L2);
      if (d > epsilon) {
        const double f = epsilon / d;
        for (std::size_t j = 0; j < w; ++j) c[j] = o[j] + (c[j] - o[j]) * f;
      }
    }
    for (std::size_t j = 0; j < w; ++j) c[j] = std::clamp(c[j], clip_min, clip_max);
  }
}

namespace {

// x <- x + step * direction(g), row by row. Rows with an all-zero gradient
// do not move.
void ascend(Tensor& x, const Tensor& g, Norm norm, double step) {
  const std::size_t w = x.row_size();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto gr = g.row(r);
    if (norm == Norm::Linf) {
      for (std::size_t j = 0; j < w; ++j) {
        if (gr[j] > 0.0) {
          xr[j] += step;
        } else if (gr[j] < 0.0) {
          xr[j] -= step;
        }
      }
    } else {
      double sq = 0.0;
      for (double v : gr) sq += v * v;
      const double n = std::sqrt(sq);
      if (n == 0.0) continue;
      for (std::size_t j = 0; j < w; ++j) xr[j] += step * (gr[j] / n);
    }
  }
}

void check_inputs(const Tensor& x, std::span<const int> y) {
  if (x.empty()) throw DimensionError("attack: empty input batch");
  if (y.size() != x.rows()) throw DimensionError("attack: label count does not match batch");
}

AdversarialBatch unperturbed(const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
  return AdversarialBatch{x, x, std::vector<int>(y.begin(), y.end()), cfg.norm, cfg.epsilon};
}

}  // namespace

AdversarialBatch fgsm(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                      std::span<const int> y, const AttackConfig& cfg) {
  if (cfg.method != Method::Fgsm) throw ConfigError("fgsm called with a non-fgsm config");
  cfg.validate();
  check_inputs(x, y);
  if (cfg.epsilon == 0.0) return unperturbed(x, y, cfg);
  const Tensor g = input_gradient(spec, params, x, y);
  Tensor adv = x;
  ascend(adv, g, cfg.norm, cfg.epsilon);
  project(adv, x, cfg.norm, cfg.epsilon, cfg.clip_min, cfg.clip_max);
  return AdversarialBatch{x, std::move(adv), std::vector<int>(y.begin(), y.end()), cfg.norm,
                          cfg.epsilon};
}

AdversarialBatch pgd(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                     std::span<const int> y, const AttackConfig& cfg, const IterateObserver& observer) {
  if (cfg.method != Method::Pgd) throw ConfigError("pgd called with a non-pgd config");
  cfg.validate();
  check_inputs(x, y);
  if (cfg.epsilon == 0.0) return unperturbed(x, y, cfg);
  const double step = cfg.effective_step_size();
  Tensor adv = x;
  if (cfg.random_start) {
    Rng rng(derive_seed(cfg.seed, 0x5A17));
    const std::size_t w = adv.row_size();
    for (std::size_t r = 0; r < adv.rows(); ++r) {
      auto a = adv.row(r);
      if (cfg.norm == Norm::Linf) {
        for (double& v : a) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
      } else {
        std::vector<double> dir(w);
        double sq = 0.0;
        for (double& d : dir) {
          d = rng.normal();
          sq += d * d;
        }
        const double radius = cfg.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(w));
        const double n = std::sqrt(sq);
        if (n > 0.0) {
          for (std::size_t j = 0; j < w; ++j) a[j] += radius * dir[j] / n;
        }
      }
    }
    project(adv, x, cfg.norm, cfg.epsilon, cfg.clip_min, cfg.clip_max);
  }
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Tensor g = input_gradient(spec, params, adv, y);
    ascend(adv, g, cfg.norm, step);
    project(adv, x, cfg.norm, cfg.epsilon, cfg.clip_min, cfg.clip_max);
    if (observer) observer(s, adv);
  }
  return AdversarialBatch{x, std::move(adv), std::vector<int>(y.begin(), y.end()), cfg.norm,
                          cfg.epsilon};
}

AdversarialBatch generate(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                          std::span<const int> y, const AttackConfig& cfg) {
  return cfg.method == Method::Fgsm ? fgsm(spec, params, x, y, cfg) : pgd(spec, params, x, y, cfg);
}

}  // namespace great::attacks
