#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "great/random.hpp"

namespace great::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor t(shape, 0.0);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

namespace {

double eval_at(const GradCase& c, const std::vector<Tensor>& inputs, std::uint64_t* signature) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const ad::Var loss = c.build(tape, vars);
  *signature = tape.kink_signature();
  return loss.value()[0];
}

}  // namespace

GradReport check_gradients(const GradCase& c) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.variable(t));
  const ad::Var loss = c.build(tape, vars);
  const std::uint64_t base = tape.kink_signature();
  tape.backward(loss);

  GradReport report;
  std::vector<Tensor> probe = c.inputs;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const Tensor analytic = vars[i].grad();
    for (std::size_t j = 0; j < c.inputs[i].size(); ++j) {
      const double x0 = c.inputs[i][j];
      std::uint64_t sp = 0, sm = 0;
      probe[i][j] = x0 + c.h;
      const double fp = eval_at(c, probe, &sp);
      probe[i][j] = x0 - c.h;
      const double fm = eval_at(c, probe, &sm);
      probe[i][j] = x0;
      if (sp != base || sm != base) {
        ++report.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * c.h);
      const double a = analytic[j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kRelFloor});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "input " + std::to_string(i) + ", coordinate " + std::to_string(j);
      }
    }
  }
  return report;
}

ad::Var weigh(ad::Var v, std::uint64_t seed) {
  return ad::sum(ad::mul(v, v.tape->constant(random_tensor(v.shape(), seed))));
}

std::vector<GradCase> primitive_cases(std::uint64_t seed) {
  auto r = [&](const Shape& s, std::uint64_t k, double lo = -1.0, double hi = 1.0) {
    return random_tensor(s, derive_seed(seed, k), lo, hi);
  };
  const std::uint64_t w = derive_seed(seed, 99);
  std::vector<GradCase> cases;
  using V = const std::vector<ad::Var>&;
  cases.push_back({"matmul", {r({3, 4}, 1), r({4, 2}, 2)}, [=](ad::Tape&, V v) { return weigh(ad::matmul(v[0], v[1]), w); }});
  cases.push_back({"add_bias", {r({3, 4}, 3), r({4}, 4)}, [=](ad::Tape&, V v) { return weigh(ad::add_bias(v[0], v[1]), w); }});
  cases.push_back({"add_bias_4d", {r({2, 3, 3, 2}, 5), r({2}, 6)}, [=](ad::Tape&, V v) { return weigh(ad::add_bias(v[0], v[1]), w); }});
  cases.push_back({"add", {r({3, 4}, 7), r({3, 4}, 8)}, [=](ad::Tape&, V v) { return weigh(ad::add(v[0], v[1]), w); }});
  cases.push_back({"sub", {r({3, 4}, 9), r({3, 4}, 10)}, [=](ad::Tape&, V v) { return weigh(ad::sub(v[0], v[1]), w); }});
  cases.push_back({"mul", {r({3, 4}, 11), r({3, 4}, 12)}, [=](ad::Tape&, V v) { return weigh(ad::mul(v[0], v[1]), w); }});
  cases.push_back({"mul_same_input", {r({3, 4}, 13)}, [=](ad::Tape&, V v) { return weigh(ad::mul(v[0], v[0]), w); }});
  cases.push_back({"scale", {r({3, 4}, 14)}, [=](ad::Tape&, V v) { return weigh(ad::scale(v[0], -1.7), w); }});
  cases.push_back({"relu", {r({4, 5}, 15)}, [=](ad::Tape&, V v) { return weigh(ad::relu(v[0]), w); }});
  cases.push_back({"abs", {r({4, 5}, 16)}, [=](ad::Tape&, V v) { return weigh(ad::abs(v[0]), w); }});
  cases.push_back({"square", {r({4, 5}, 17)}, [=](ad::Tape&, V v) { return weigh(ad::square(v[0]), w); }});
  cases.push_back({"sum", {r({3, 4}, 18)}, [=](ad::Tape&, V v) { return ad::scale(ad::sum(v[0]), 1.3); }});
  cases.push_back({"row_sum", {r({3, 2, 2}, 19)}, [=](ad::Tape&, V v) { return weigh(ad::row_sum(v[0]), w); }});
  cases.push_back({"reshape", {r({3, 4}, 20)}, [=](ad::Tape&, V v) { return weigh(ad::reshape(v[0], {4, 3}), w); }});
  cases.push_back({"flatten", {r({2, 2, 3}, 21)}, [=](ad::Tape&, V v) { return weigh(ad::flatten(v[0]), w); }});
  cases.push_back({"gather_rows", {r({4, 3}, 22)}, [=](ad::Tape&, V v) {
                     const std::vector<std::size_t> rows = {0, 2, 2, 3, 0};
                     return weigh(ad::gather_rows(v[0], rows), w);
                   }});
  cases.push_back({"softmax_cross_entropy", {r({4, 3}, 23, -3.0, 3.0)}, [=](ad::Tape&, V v) {
                     const std::vector<int> labels = {0, 2, 1, 2};
                     return ad::softmax_cross_entropy(v[0], labels);
                   }});
  cases.push_back({"conv2d", {r({2, 5, 5, 2}, 24), r({3, 3, 2, 3}, 25)}, [=](ad::Tape&, V v) { return weigh(ad::conv2d(v[0], v[1]), w); }});
  cases.push_back({"max_pool2d", {r({2, 4, 4, 2}, 26)}, [=](ad::Tape&, V v) { return weigh(ad::max_pool2d(v[0], 2), w); }});
  cases.push_back({"batch_norm_train", {r({6, 3}, 27), r({3}, 28, 0.5, 1.5), r({3}, 29)}, [=](ad::Tape&, V v) {
                     return weigh(ad::batch_norm_train(v[0], v[1], v[2], 1e-3, nullptr), w);
                   }});
  cases.push_back({"batch_norm_train_4d", {r({2, 3, 3, 2}, 30), r({2}, 31, 0.5, 1.5), r({2}, 32)}, [=](ad::Tape&, V v) {
                     return weigh(ad::batch_norm_train(v[0], v[1], v[2], 1e-3, nullptr), w);
                   }});
  const Tensor mean = r({3}, 33), var = r({3}, 34, 0.5, 2.0);
  cases.push_back({"batch_norm_eval", {r({5, 3}, 35), r({3}, 36, 0.5, 1.5), r({3}, 37)}, [=](ad::Tape&, V v) {
                     return weigh(ad::batch_norm_eval(v[0], v[1], v[2], mean, var, 1e-3), w);
                   }});
  return cases;
}

training::TrainingBatch micro_batch(const nn::ModelSpec& spec, std::uint64_t seed, double tau, std::size_t k) {
  using graph::EdgeType;
  training::TrainingBatch b;
  b.tau = tau;
  b.k = k;
  b.samples = {0, 1, 2};
  b.labels = {0, 1, 1};
  Shape shape = spec.input_shape;
  shape.insert(shape.begin(), 3);
  b.clean = random_tensor(shape, derive_seed(seed, 1), 0.0, 1.0);
  b.adversarial = random_tensor(shape, derive_seed(seed, 2), 0.0, 1.0);
  shape[0] = 4;
  b.neighbors = random_tensor(shape, derive_seed(seed, 3), 0.0, 1.0);
  b.edges = {{0, 0, tau + 0.10, EdgeType::CleanClean}, {0, 1, tau + 0.05, EdgeType::CleanAdv},
             {1, 2, tau + 0.15, EdgeType::AdvClean},   {1, 3, tau + 0.02, EdgeType::AdvAdv},
             {2, 2, tau + 0.08, EdgeType::CleanClean}, {2, 1, tau + 0.11, EdgeType::AdvAdv}};
  b.isolated = {0, 0, 0};
  return b;
}

namespace {

GradCase loss_case(const std::string& name, const nn::ModelSpec& spec, const nn::ParamSet& params,
                   const training::TrainingBatch& batch, const training::GreatConfig& cfg,
                   const nn::ForwardOptions& opts) {
  GradCase c;
  c.name = name;
  c.h = 1e-3;
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.params[i].trainable) {
      trainable.push_back(i);
      c.inputs.push_back(params.params[i].value);
    }
  }
  c.build = [=](ad::Tape& tape, const std::vector<ad::Var>& v) {
    nn::Bound bound;
    std::size_t next = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (next < trainable.size() && trainable[next] == i) {
        bound.vars.push_back(v[next++]);
      } else {
        bound.vars.push_back(tape.constant(params.params[i].value));
      }
    }
    return training::great_loss(tape, spec, params, bound, batch, cfg, opts).total;
  };
  return c;
}

}  // namespace

std::vector<GradCase> composite_cases(std::uint64_t seed) {
  std::vector<GradCase> cases;
  training::GreatConfig cfg;
  cfg.lambda = 0.7;
  cfg.alpha11 = 1.0;
  cfg.alpha12 = 0.5;
  cfg.alpha21 = 2.0;
  cfg.alpha22 = 1.5;
  cfg.alpha3 = 0.8;

  const auto mlp = nn::make_mlp(2, {5, 4}, 2);
  const auto mlp_params = nn::init_params(mlp, derive_seed(seed, 7));
  const auto mlp_batch = micro_batch(mlp, derive_seed(seed, 8), cfg.tau, cfg.k);
  cfg.metric = training::Metric::L2Squared;
  cases.push_back(loss_case("great_loss_mlp_l2", mlp, mlp_params, mlp_batch, cfg, {}));
  cfg.metric = training::Metric::L1;
  cases.push_back(loss_case("great_loss_mlp_l1", mlp, mlp_params, mlp_batch, cfg, {}));

  nn::CnnOptions opts;
  opts.filters = {2};
  opts.dense_width = 4;
  const auto cnn = nn::make_cnn(6, 6, 1, 3, opts);
  const auto cnn_params = nn::init_params(cnn, derive_seed(seed, 9));
  const auto cnn_batch = micro_batch(cnn, derive_seed(seed, 10), cfg.tau, cfg.k);
  cfg.metric = training::Metric::L2Squared;
  cases.push_back(loss_case("great_loss_cnn_train_mode", cnn, cnn_params, cnn_batch, cfg, {true, derive_seed(seed, 11)}));
  return cases;
}

std::vector<std::vector<graph::EdgeRecord>> brute_force_edges(const std::vector<graph::NodeRecord>& nodes,
                                                              const graph::BuildOptions& options) {
  const std::size_t n = nodes.size();
  std::vector<std::vector<graph::EdgeRecord>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<graph::EdgeRecord> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double w = graph::cosine(nodes[i].embedding, nodes[j].embedding);
      if (w >= options.tau) {
        cand.push_back({i, j, w, graph::edge_type_for(nodes[i].is_adversarial, nodes[j].is_adversarial)});
      }
    }
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      return a.weight != b.weight ? a.weight > b.weight : a.dst < b.dst;
    });
    if (cand.size() > options.k) cand.resize(options.k);
    out[i] = std::move(cand);
  }
  if (options.mutual) {
    std::set<std::pair<std::size_t, std::size_t>> chosen;
    for (const auto& list : out) {
      for (const auto& e : list) chosen.insert({e.src, e.dst});
    }
    for (auto& list : out) {
      std::erase_if(list, [&](const auto& e) { return !chosen.count({e.dst, e.src}); });
    }
  }
  return out;
}

std::vector<graph::NodeRecord> random_nodes(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  const int style = static_cast<int>(rng.below(3));
  std::vector<graph::NodeRecord> nodes(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = nodes[i];
    node.id = i;
    node.sample_ref = i;
    node.is_adversarial = rng.uniform() < 0.4;
    if (rng.uniform() < 0.7) node.label = static_cast<int>(rng.below(3));
    node.embedding.resize(dim);
    for (double& v : node.embedding) {
      switch (style) {
        case 0: v = rng.normal(); break;
        case 1: v = rng.uniform(); break;  // nonnegative, like ReLU features
        default: v = static_cast<double>(rng.below(3)); break;  // coarse grid: many exact ties
      }
    }
    if (i > 0 && rng.uniform() < 0.15) node.embedding = nodes[rng.below(i)].embedding;  // exact duplicate
    if (rng.uniform() < 0.05) std::fill(node.embedding.begin(), node.embedding.end(), 0.0);
  }
  return nodes;
}

AttackCheck check_attack_invariants(std::size_t cases, std::uint64_t seed) {
  AttackCheck check;
  Rng rng(seed);
  auto fail = [&](std::size_t& counter, const std::string& what) {
    ++counter;
    if (check.first_failure.empty()) check.first_failure = what;
  };
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t d = 2 + rng.below(5);
    const std::size_t classes = 2 + rng.below(3);
    const auto spec = nn::make_mlp(d, {3 + rng.below(6)}, classes);
    const auto params = nn::init_params(spec, rng.next_u64());
    const std::size_t n = 1 + rng.below(6);
    Tensor x({n, d}, 0.0);
    for (double& v : x.values()) {
      const double u = rng.uniform();
      v = u < 0.1 ? 0.0 : (u < 0.2 ? 1.0 : rng.uniform());
    }
    std::vector<int> y(n);
    for (int& label : y) label = static_cast<int>(rng.below(classes));

    attacks::AttackConfig cfg;
    cfg.norm = rng.uniform() < 0.5 ? attacks::Norm::Linf : attacks::Norm::L2;
    cfg.epsilon = rng.uniform() < 0.05 ? 0.0 : rng.uniform(0.0, 0.5);
    const bool use_pgd = rng.uniform() < 0.5;
    if (use_pgd) {
      cfg.method = attacks::Method::Pgd;
      cfg.steps = 1 + rng.below(5);
      cfg.random_start = rng.uniform() < 0.5;
      cfg.seed = rng.next_u64();
    }
    const std::string tag = "case " + std::to_string(c) + " (" + attacks::to_string(cfg.method) + ", " +
                            attacks::to_string(cfg.norm) + ", eps " + std::to_string(cfg.epsilon) + ")";
    const auto adv = attacks::generate(spec, params, x, y, cfg);
    ++check.cases;

    for (std::size_t i = 0; i < n; ++i) {
      if (attacks::distance(adv.perturbed.row(i), x.row(i), cfg.norm) > cfg.epsilon + 1e-9) {
        fail(check.ball_violations, tag + ": outside the epsilon ball");
      }
    }
    for (double v : adv.perturbed.values()) {
      if (v < 0.0 || v > 1.0) fail(check.clip_violations, tag + ": outside [0, 1]");
    }

    attacks::AttackConfig fgsm_cfg = attacks::fgsm_config(cfg.norm, cfg.epsilon);
    const auto fgsm = attacks::generate(spec, params, x, y, fgsm_cfg);
    if (cfg.norm == attacks::Norm::Linf) {
      const Tensor g = attacks::input_gradient(spec, params, x, y);
      for (std::size_t j = 0; j < x.size(); ++j) {
        if (g[j] == 0.0) continue;
        const double target = x[j] + (g[j] > 0.0 ? cfg.epsilon : -cfg.epsilon);
        if (target < 0.0 || target > 1.0) continue;  // clipped coordinate
        if (std::abs(std::abs(fgsm.perturbed[j] - x[j]) - cfg.epsilon) > 1e-12) {
          fail(check.saturation_violations, tag + ": FGSM step not saturated");
        }
      }
    }
    attacks::AttackConfig one_step = attacks::pgd_config(cfg.norm, cfg.epsilon, 1, cfg.epsilon);
    const auto pgd = attacks::generate(spec, params, x, y, one_step);
    double gap = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) gap = std::max(gap, std::abs(pgd.perturbed[j] - fgsm.perturbed[j]));
    check.worst_identity_gap = std::max(check.worst_identity_gap, gap);
    if (gap > 1e-12) fail(check.identity_violations, tag + ": PGD(1 step, step=eps) differs from FGSM");
  }
  return check;
}

}  // namespace great::testing
