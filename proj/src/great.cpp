#include "great/great.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <map>
#include <sstream>

#include "great/errors.hpp"
#include "great/eval.hpp"
#include "great/io.hpp"
#include "great/random.hpp"

namespace great::training {

namespace {

constexpr std::size_t kChunk = 512;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool clean_side(graph::EdgeType type) {
  return type == graph::EdgeType::CleanClean || type == graph::EdgeType::CleanAdv;
}

// Applies fn to consecutive row blocks of x and concatenates the results.
template <typename F>
Tensor chunked(const Tensor& x, F&& fn) {
  if (x.rows() <= kChunk) return fn(x, std::size_t{0});
  std::vector<double> out;
  Shape shape;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < x.rows(); start += kChunk) {
    const std::size_t end = std::min(x.rows(), start + kChunk);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Tensor part = fn(x.select_rows(idx), start);
    shape = part.shape();
    out.insert(out.end(), part.values().begin(), part.values().end());
  }
  shape[0] = x.rows();
  return Tensor(shape, std::move(out));
}

Tensor embed(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x) {
  return chunked(x, [&](const Tensor& part, std::size_t) { return nn::predict(spec, params, part).embedding; });
}

Tensor perturb(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
               const std::vector<int>& y, const attacks::AttackConfig& attack) {
  return chunked(x, [&](const Tensor& part, std::size_t start) {
    std::span<const int> ys(y.data() + start, part.rows());
    return attacks::generate(spec, params, part, ys, attack).perturbed;
  });
}

std::vector<std::size_t> rows_of(const std::vector<BatchEdge>& edges, bool anchor_side) {
  std::vector<std::size_t> out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.push_back(anchor_side ? e.anchor : e.neighbor_row);
  return out;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Base: return "base";
    case Mode::Nsl: return "nsl";
    case Mode::At: return "at";
    case Mode::GreatAdv: return "great_adv";
    case Mode::Great: return "great";
  }
  return "?";
}

std::string to_string(Metric metric) { return metric == Metric::L1 ? "l1" : "l2_squared"; }

Mode mode_from_string(const std::string& name) {
  for (Mode m : {Mode::Base, Mode::Nsl, Mode::At, Mode::GreatAdv, Mode::Great}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + name + "' (expected base, nsl, at, great_adv or great)");
}

Metric metric_from_string(const std::string& name) {
  if (name == "l1") return Metric::L1;
  if (name == "l2_squared") return Metric::L2Squared;
  throw ConfigError("unknown neighbor distance '" + name + "' (expected l1 or l2_squared)");
}

void GreatConfig::validate() const {
  require(lambda >= 0.0, "lambda must be >= 0");
  require(alpha11 >= 0.0 && alpha12 >= 0.0 && alpha21 >= 0.0 && alpha22 >= 0.0 && alpha3 >= 0.0,
          "alpha weights must be >= 0");
  require(tau >= 0.0 && tau <= 1.0, "tau must lie in [0, 1]");
  attack.validate();
}

bool Terms::edge(graph::EdgeType type) const {
  switch (type) {
    case graph::EdgeType::CleanClean: return cc;
    case graph::EdgeType::CleanAdv: return ca;
    case graph::EdgeType::AdvClean: return ac;
    case graph::EdgeType::AdvAdv: return aa;
  }
  return false;
}

Terms terms_for(Mode mode) {
  switch (mode) {
    case Mode::Base: return {true, false, false, false, false, false};
    case Mode::Nsl: return {true, false, true, false, false, false};
    case Mode::At: return {true, true, false, false, false, false};
    case Mode::GreatAdv: return {false, true, false, false, true, true};
    case Mode::Great: return {true, true, true, true, true, true};
  }
  return {};
}

double neighbor_distance(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (a.size() != b.size()) {
    throw DimensionError("neighbor_distance: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += metric == Metric::L1 ? std::abs(diff) : diff * diff;
  }
  return d;
}

void TrainingBatch::validate() const {
  const std::size_t n = samples.size();
  if (labels.size() != n || isolated.size() != n) throw ContractError("batch: ragged anchor fields");
  if (n == 0) throw ContractError("batch: no anchors");
  if (clean.empty() || clean.rows() != n) throw ContractError("batch: clean rows do not match anchors");
  if (!adversarial.empty() && adversarial.rows() != n) {
    throw ContractError("batch: adversarial rows do not match anchors");
  }
  std::vector<std::size_t> clean_count(n, 0), adv_count(n, 0);
  for (const auto& e : edges) {
    if (e.anchor >= n) throw ContractError("batch: edge anchor out of range");
    if (neighbors.empty() || e.neighbor_row >= neighbors.rows()) {
      throw ContractError("batch: edge neighbor row out of range");
    }
    if (!(e.weight >= tau)) throw ContractError("batch: edge weight below tau");
    auto& count = clean_side(e.type) ? clean_count[e.anchor] : adv_count[e.anchor];
    if (++count > k) throw ContractError("batch: more than k neighbors for one anchor");
    if (isolated[e.anchor]) throw ContractError("batch: isolated anchor has an edge");
  }
}

double combine(const LossBreakdown& p, const GreatConfig& cfg) {
  const Terms t = terms_for(cfg.mode);
  const double lambda = t.any_edge() ? cfg.lambda : 0.0;
  const double reg = (t.cc ? cfg.alpha11 * p.reg_cc : 0.0) + (t.ca ? cfg.alpha12 * p.reg_ca : 0.0) +
                     (t.ac ? cfg.alpha21 * p.reg_ac : 0.0) + (t.aa ? cfg.alpha22 * p.reg_aa : 0.0);
  return p.supervised_clean + p.supervised_adv + lambda * reg;
}

LossGraph great_loss(ad::Tape& tape, const nn::ModelSpec& spec, const nn::ParamSet& params,
                     const nn::Bound& bound, const TrainingBatch& batch, const GreatConfig& cfg,
                     const nn::ForwardOptions& options) {
  if (batch.tau != cfg.tau || batch.k != cfg.k) {
    throw ConfigError("batch was assembled with tau=" + io::format_double(batch.tau) +
                      " k=" + std::to_string(batch.k) + " but the config has tau=" +
                      io::format_double(cfg.tau) + " k=" + std::to_string(cfg.k));
  }
  if (batch.size() == 0) throw ContractError("great_loss: empty batch");
  const Terms t = terms_for(cfg.mode);
  const double b = static_cast<double>(batch.size());
  const double lambda = t.any_edge() ? cfg.lambda : 0.0;

  auto opts = [&](std::uint64_t role) {
    return nn::ForwardOptions{options.training, derive_seed(options.dropout_seed, role)};
  };

  LossGraph out;
  std::optional<nn::ForwardResult> clean, adv, nb;
  if (t.clean_anchors()) {
    clean = nn::forward(spec, params, bound, tape.constant(batch.clean), opts(1));
    out.batch_stats = clean->batch_stats;
  }
  if (t.adversarial_anchors() && !batch.adversarial.empty()) {
    adv = nn::forward(spec, params, bound, tape.constant(batch.adversarial), opts(2));
    if (!clean) out.batch_stats = adv->batch_stats;
  }

  std::vector<std::pair<double, ad::Var>> parts;
  if (t.supervised_clean) {
    const ad::Var sc = ad::softmax_cross_entropy(clean->logits, batch.labels);
    out.breakdown.supervised_clean = sc.value()[0];
    parts.emplace_back(1.0, sc);
  }
  if (t.supervised_adv && adv) {
    const ad::Var sa = ad::scale(ad::softmax_cross_entropy(adv->logits, batch.labels), cfg.alpha3);
    out.breakdown.supervised_adv = sa.value()[0];
    parts.emplace_back(1.0, sa);
  }

  const graph::EdgeType types[] = {graph::EdgeType::CleanClean, graph::EdgeType::CleanAdv,
                                   graph::EdgeType::AdvClean, graph::EdgeType::AdvAdv};
  const double alphas[] = {cfg.alpha11, cfg.alpha12, cfg.alpha21, cfg.alpha22};
  double* slots[] = {&out.breakdown.reg_cc, &out.breakdown.reg_ca, &out.breakdown.reg_ac,
                     &out.breakdown.reg_aa};
  for (int i = 0; i < 4; ++i) {
    if (!t.edge(types[i])) continue;
    const auto& anchor = clean_side(types[i]) ? clean : adv;
    if (!anchor) continue;
    std::vector<BatchEdge> edges;
    for (const auto& e : batch.edges) {
      if (e.type == types[i]) edges.push_back(e);
    }
    if (edges.empty()) continue;
    if (!nb) nb = nn::forward(spec, params, bound, tape.constant(batch.neighbors), opts(3));
    const auto a_rows = rows_of(edges, true);
    const auto n_rows = rows_of(edges, false);
    const ad::Var diff = ad::sub(ad::gather_rows(anchor->embedding, a_rows), ad::gather_rows(nb->embedding, n_rows));
    const ad::Var dist = ad::row_sum(cfg.metric == Metric::L1 ? ad::abs(diff) : ad::square(diff));
    Tensor w({edges.size()}, 0.0);
    for (std::size_t j = 0; j < edges.size(); ++j) w[j] = edges[j].weight;
    const ad::Var term = ad::scale(ad::sum(ad::mul(dist, tape.constant(std::move(w)))), 1.0 / b);
    *slots[i] = term.value()[0];
    parts.emplace_back(lambda * alphas[i], term);
  }

  if (parts.empty()) {
    out.total = tape.constant(Tensor::scalar(0.0));
  } else {
    out.total = parts[0].first == 1.0 ? parts[0].second : ad::scale(parts[0].second, parts[0].first);
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const ad::Var term = parts[i].first == 1.0 ? parts[i].second : ad::scale(parts[i].second, parts[i].first);
      out.total = ad::add(out.total, term);
    }
  }
  out.breakdown.total = out.total.value()[0];
  return out;
}

LossBreakdown evaluate_loss(const nn::ModelSpec& spec, const nn::ParamSet& params,
                            const TrainingBatch& batch, const GreatConfig& cfg) {
  ad::Tape tape;
  const nn::Bound bound = nn::bind(tape, params, false);
  return great_loss(tape, spec, params, bound, batch, cfg).breakdown;
}

std::vector<std::optional<int>> propagate_labels(const graph::SimilarityGraph& graph,
                                                 const std::vector<std::uint8_t>& labeled_mask,
                                                 std::size_t passes) {
  const std::size_t n = graph.node_count();
  if (labeled_mask.size() != n) throw ContractError("propagate_labels: mask size differs from node count");
  std::vector<std::optional<int>> labels(n);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!labeled_mask[i]) continue;
    if (!graph.node(i).label) throw ContractError("propagate_labels: labeled node " + std::to_string(i) + " has no label");
    labels[i] = graph.node(i).label;
    any = true;
  }
  if (!any) throw ContractError("propagate_labels: no labeled nodes");
  for (std::size_t pass = 0; pass < passes; ++pass) {
    auto next = labels;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i]) continue;
      // Adjacency is ordered by weight, ties on the lower id first.
      for (const auto& e : graph.adjacency(i)) {
        if (labels[e.dst]) {
          next[i] = labels[e.dst];
          changed = true;
          break;
        }
      }
    }
    labels = std::move(next);
    if (!changed) break;
  }
  return labels;
}

AnchorSet make_anchor_set(const data::Dataset& dataset, const graph::SimilarityGraph* graph,
                          std::size_t passes) {
  std::vector<std::optional<int>> label_of(dataset.size());
  for (std::size_t i : dataset.labeled_train()) label_of[i] = dataset.labels[i];
  AnchorSet out;
  if (graph && passes > 0 && graph->node_count() > 0) {
    std::vector<std::uint8_t> mask(graph->node_count(), 0);
    bool any = false;
    for (const auto& node : graph->nodes()) {
      if (node.label) mask[node.id] = 1, any = true;
    }
    if (any) {
      const auto propagated = propagate_labels(*graph, mask, passes);
      for (const auto& node : graph->nodes()) {
        const std::size_t ref = node.sample_ref;
        if (node.is_adversarial || ref >= dataset.size() || label_of[ref]) continue;
        if (dataset.split[ref] != data::Split::Train || !propagated[node.id]) continue;
        label_of[ref] = propagated[node.id];
        ++out.pseudo_labeled;
      }
    }
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!label_of[i]) continue;
    out.samples.push_back(i);
    out.labels.push_back(*label_of[i]);
  }
  return out;
}

graph::SimilarityGraph build_training_graph(const nn::ModelSpec& spec, const nn::ParamSet& params,
                                            const data::Dataset& dataset,
                                            const GraphOptions& options) {
  const auto train_idx = dataset.indices(data::Split::Train);
  std::vector<graph::NodeRecord> nodes;
  if (train_idx.empty()) return graph::build_graph({}, {options.tau, options.k, options.mutual});

  auto append = [&](const Tensor& emb, const std::vector<std::size_t>& refs, bool adversarial) {
    const std::size_t d = emb.row_size();
    for (std::size_t r = 0; r < refs.size(); ++r) {
      graph::NodeRecord node;
      node.id = nodes.size();
      node.sample_ref = refs[r];
      node.is_adversarial = adversarial;
      node.embedding.assign(emb.values().begin() + r * d, emb.values().begin() + (r + 1) * d);
      if (adversarial || dataset.labeled[refs[r]]) node.label = dataset.labels[refs[r]];
      nodes.push_back(std::move(node));
    }
  };

  const auto clean = data::take(dataset, train_idx);
  append(embed(spec, params, clean.x), train_idx, false);
  if (options.adversarial_twins) {
    const auto labeled = dataset.labeled_train();
    if (!labeled.empty()) {
      const auto sub = data::take(dataset, labeled);
      const Tensor adv = perturb(spec, params, sub.x, sub.y, options.attack);
      append(embed(spec, params, adv), labeled, true);
    }
  }
  return graph::build_graph(std::move(nodes), {options.tau, options.k, options.mutual});
}

BatchAssembler::BatchAssembler(const data::Dataset& dataset, const graph::SimilarityGraph* graph,
                               AnchorSet anchors, const GreatConfig& cfg, std::size_t batch_size,
                               std::uint64_t seed)
    : dataset_(dataset),
      graph_(nullptr),
      anchors_(std::move(anchors)),
      cfg_(cfg),
      terms_(terms_for(cfg.mode)),
      batch_size_(batch_size),
      seed_(seed) {
  require(batch_size >= 1, "batch_size must be >= 1");
  if (anchors_.samples.size() != anchors_.labels.size()) throw ContractError("anchor set: ragged labels");
  for (std::size_t s : anchors_.samples) {
    if (s >= dataset_.size()) throw ContractError("anchor set: sample " + std::to_string(s) + " outside the dataset");
  }
  set_graph(graph);
}

void BatchAssembler::set_graph(const graph::SimilarityGraph* graph) {
  if (graph) {
    for (const auto& node : graph->nodes()) {
      if (node.sample_ref >= dataset_.size()) {
        throw ContractError("graph node " + std::to_string(node.id) + " references sample " +
                            std::to_string(node.sample_ref) + " outside the dataset");
      }
    }
  }
  graph_ = graph;
}

std::vector<std::size_t> BatchAssembler::epoch_order(std::size_t epoch) const {
  Rng rng(derive_seed(seed_, 0xE90C, epoch));
  return rng.permutation(anchors_.samples.size());
}

std::vector<std::pair<std::size_t, int>> BatchAssembler::adversarial_targets() const {
  std::vector<std::pair<std::size_t, int>> out;
  if (!terms_.adversarial_anchors() && !terms_.adversarial_neighbors()) return out;
  std::vector<int> label_of(dataset_.size(), INT_MIN);
  if (terms_.adversarial_anchors()) {
    for (std::size_t i = 0; i < anchors_.samples.size(); ++i) label_of[anchors_.samples[i]] = anchors_.labels[i];
  }
  if (terms_.adversarial_neighbors() && graph_) {
    for (const auto& node : graph_->nodes()) {
      if (!node.is_adversarial || label_of[node.sample_ref] != INT_MIN) continue;
      if (!node.label) throw ContractError("adversarial node " + std::to_string(node.id) + " has no label");
      label_of[node.sample_ref] = *node.label;
    }
  }
  for (std::size_t i = 0; i < label_of.size(); ++i) {
    if (label_of[i] != INT_MIN) out.emplace_back(i, label_of[i]);
  }
  return out;
}

AdversarialCache BatchAssembler::regenerate(const nn::ModelSpec& spec, const nn::ParamSet& params) const {
  AdversarialCache cache;
  cache.row_of.assign(dataset_.size(), AdversarialCache::npos);
  const auto targets = adversarial_targets();
  if (targets.empty()) return cache;
  std::vector<std::size_t> idx;
  std::vector<int> y;
  for (const auto& [sample, label] : targets) {
    cache.row_of[sample] = idx.size();
    idx.push_back(sample);
    y.push_back(label);
  }
  cache.features = perturb(spec, params, dataset_.features.select_rows(idx), y, cfg_.attack);
  return cache;
}

TrainingBatch BatchAssembler::assemble(std::span<const std::size_t> positions,
                                       const AdversarialCache& cache) const {
  TrainingBatch batch;
  batch.tau = graph_ ? graph_->tau() : cfg_.tau;
  batch.k = graph_ ? graph_->k() : cfg_.k;
  for (std::size_t p : positions) {
    batch.samples.push_back(anchors_.samples[p]);
    batch.labels.push_back(anchors_.labels[p]);
  }
  batch.clean = dataset_.features.select_rows(batch.samples);
  const bool adversarial = terms_.adversarial_anchors() && !cache.features.empty();
  if (adversarial) {
    std::vector<std::size_t> rows;
    for (std::size_t s : batch.samples) {
      if (!cache.has(s)) throw ContractError("adversarial cache misses anchor " + std::to_string(s));
      rows.push_back(cache.row_of[s]);
    }
    batch.adversarial = cache.features.select_rows(rows);
  }

  // Neighbor rows are shared between anchors of the same batch.
  std::map<std::pair<std::size_t, bool>, std::size_t> row_of;
  std::vector<std::pair<std::size_t, bool>> sources;
  batch.isolated.assign(batch.size(), 1);
  auto pull = [&](std::size_t anchor, std::optional<std::size_t> node_id) {
    if (!node_id) return;
    for (const auto& e : graph_->adjacency(*node_id)) {
      if (!terms_.edge(e.type)) continue;
      const auto& dst = graph_->node(e.dst);
      if (dst.is_adversarial && !cache.has(dst.sample_ref)) continue;
      const std::pair<std::size_t, bool> key{dst.sample_ref, dst.is_adversarial};
      auto [it, inserted] = row_of.emplace(key, sources.size());
      if (inserted) sources.push_back(key);
      batch.edges.push_back({anchor, it->second, e.weight, e.type});
      batch.isolated[anchor] = 0;
    }
  };
  if (graph_) {
    // Clean-anchored pulls first so their neighbor rows come out in the same
    // order whichever adversarial terms are enabled.
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (terms_.cc || terms_.ca) pull(i, graph_->clean_node(batch.samples[i]));
    }
    for (std::size_t i = 0; i < batch.size() && adversarial && (terms_.ac || terms_.aa); ++i) {
      pull(i, graph_->adversarial_node(batch.samples[i]));
    }
  }
  if (!sources.empty()) {
    const std::size_t w = dataset_.features.row_size();
    std::vector<double> values;
    values.reserve(sources.size() * w);
    for (const auto& [sample, is_adv] : sources) {
      const auto row = is_adv ? cache.features.row(cache.row_of[sample]) : dataset_.features.row(sample);
      values.insert(values.end(), row.begin(), row.end());
    }
    Shape shape = dataset_.features.shape();
    shape[0] = sources.size();
    batch.neighbors = Tensor(shape, std::move(values));
  }
  return batch;
}

std::vector<TrainingBatch> BatchAssembler::epoch(std::size_t epoch, const AdversarialCache& cache) const {
  const auto order = epoch_order(epoch);
  std::vector<TrainingBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const std::size_t end = std::min(order.size(), start + batch_size_);
    out.push_back(assemble(std::span<const std::size_t>(order).subspan(start, end - start), cache));
  }
  return out;
}

TrainResult train(const nn::ModelSpec& spec, nn::ParamSet params, const TrainInputs& inputs,
                  const GreatConfig& cfg, const TrainOptions& options, const StepObserver& observer) {
  cfg.validate();
  if (!inputs.dataset) throw ContractError("train: no dataset");
  const bool rebuilding = options.rebuild_every > 0 && inputs.graph != nullptr;
  if (rebuilding && !inputs.rebuild) {
    throw ConfigError("rebuild_every is set but no graph rebuild function was given");
  }
  TrainResult result;
  if (options.epochs == 0) {
    result.params = std::move(params);
    return result;
  }
  if (inputs.anchors.samples.empty()) throw ContractError("train: no labeled anchors");
  const data::Dataset& dataset = *inputs.dataset;
  BatchAssembler assembler(dataset, inputs.graph, inputs.anchors, cfg, options.batch_size, options.seed);
  auto optimizer = nn::make_optimizer(options.optimizer, options.learning_rate, params);
  const auto val = data::take(dataset, data::Split::Val);
  std::optional<graph::SimilarityGraph> rebuilt;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    if (rebuilding && epoch > 1 && (epoch - 1) % options.rebuild_every == 0) {
      rebuilt = inputs.rebuild(params);
      assembler.set_graph(&*rebuilt);
    }
    const AdversarialCache cache = assembler.regenerate(spec, params);
    const auto batches = assembler.epoch(epoch - 1, cache);

    EpochRecord record;
    record.epoch = epoch;
    LossBreakdown& mean = record.loss;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      ad::Tape tape;
      const nn::Bound bound = nn::bind(tape, params, true);
      const nn::ForwardOptions fwd{true, derive_seed(options.seed, epoch, s)};
      const LossGraph loss = great_loss(tape, spec, params, bound, batches[s], cfg, fwd);
      if (!std::isfinite(loss.breakdown.total)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      tape.backward(loss.total);
      nn::step(params, optimizer, nn::gradients(bound, params));
      nn::update_running_stats(spec, params, loss.batch_stats);

      const LossBreakdown& b = loss.breakdown;
      mean.supervised_clean += b.supervised_clean;
      mean.supervised_adv += b.supervised_adv;
      mean.reg_cc += b.reg_cc;
      mean.reg_ca += b.reg_ca;
      mean.reg_ac += b.reg_ac;
      mean.reg_aa += b.reg_aa;
      mean.total += b.total;
      if (observer) observer({epoch, s, b, &params});
    }
    const double steps = static_cast<double>(batches.size());
    for (double* f : {&mean.supervised_clean, &mean.supervised_adv, &mean.reg_cc, &mean.reg_ca,
                      &mean.reg_ac, &mean.reg_aa, &mean.total}) {
      *f /= steps;
    }
    if (options.validation && !val.index.empty()) {
      record.clean_val_acc = eval::accuracy(spec, params, val.x, val.y);
      record.robust_val_acc = eval::robust_accuracy(spec, params, val.x, val.y, cfg.attack);
    } else {
      record.clean_val_acc = std::nan("");
      record.robust_val_acc = std::nan("");
    }
    result.log.push_back(record);
  }
  result.params = std::move(params);
  return result;
}

std::string training_log_csv(const std::vector<EpochRecord>& log) {
  std::ostringstream out;
  out << "epoch,supervised_clean,supervised_adv,reg_cc,reg_ca,reg_ac,reg_aa,total,clean_val_acc,robust_val_acc\n";
  for (const auto& r : log) {
    const auto& l = r.loss;
    out << r.epoch;
    for (double v : {l.supervised_clean, l.supervised_adv, l.reg_cc, l.reg_ca, l.reg_ac, l.reg_aa,
                     l.total, r.clean_val_acc, r.robust_val_acc}) {
      out << ',' << io::format_double(v);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace great::training
