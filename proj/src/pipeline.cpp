#include "great/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "great/errors.hpp"
#include "great/random.hpp"

namespace great::pipeline {

namespace {

std::vector<std::size_t> sizes(const config::RunConfig& cfg, const std::string& key) {
  std::vector<std::size_t> out;
  for (auto v : cfg.integers(key)) {
    if (v == 0) throw ConfigError("config key '" + key + "': widths must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

bool needs_twins(training::Mode mode) {
  const auto t = training::terms_for(mode);
  return t.ca || t.ac || t.aa;
}

data::Dataset make_dataset(const config::RunConfig& cfg, std::uint64_t seed) {
  const auto kind = cfg.get("dataset.kind");
  if (kind == "two_moons") return data::make_two_moons(cfg.integer("dataset.n"), cfg.real("dataset.noise"), seed);
  if (kind == "blobs") {
    return data::make_blobs(cfg.integer("dataset.n"), cfg.integer("dataset.classes"), cfg.real("dataset.spread"), seed);
  }
  if (kind == "idx") {
    data::LoadOptions opts;
    if (cfg.integer("dataset.height") > 0) opts.height = cfg.integer("dataset.height");
    if (cfg.integer("dataset.width") > 0) opts.width = cfg.integer("dataset.width");
    opts.split_seed = seed;
    return data::load_idx_images(cfg.get("dataset.images"), cfg.get("dataset.labels"), opts);
  }
  if (kind == "csv") {
    data::CsvSchema schema;
    schema.label_column = cfg.get("dataset.label_column");
    return data::load_csv(cfg.get("dataset.csv"), schema, seed);
  }
  throw ConfigError("config key 'dataset.kind': unknown dataset '" + kind + "'");
}

nn::ModelSpec make_model(const config::RunConfig& cfg, const data::Dataset& dataset) {
  const Shape sample = dataset.sample_shape();
  if (cfg.get("model.kind") == "cnn") {
    if (sample.size() != 3) {
      throw ConfigError("config key 'model.kind': cnn needs [h, w, c] samples, got " + shape_string(sample));
    }
    nn::CnnOptions opts;
    opts.filters = sizes(cfg, "model.filters");
    opts.extended = cfg.flag("model.extended");
    opts.dense_width = cfg.integer("model.dense_width");
    opts.dropout = cfg.real("model.dropout");
    opts.batchnorm = cfg.flag("model.batchnorm");
    return nn::make_cnn(sample[0], sample[1], sample[2], dataset.class_count, opts);
  }
  nn::ModelSpec spec = nn::make_mlp(shape_product(sample), sizes(cfg, "model.hidden"), dataset.class_count);
  if (sample.size() > 1) {
    spec.input_shape = sample;
    spec.layers.insert(spec.layers.begin(), nn::Layer::flatten());
    ++spec.embedding_layer;
    spec.validate();
  }
  return spec;
}

Prepared prepare(const config::RunConfig& cfg, std::uint64_t seed, double label_fraction) {
  Prepared p;
  p.seed = seed;
  p.dataset = make_dataset(cfg, seed);
  if (label_fraction < 1.0) p.dataset = data::subsample_labels(p.dataset, label_fraction, derive_seed(seed, 0x5B));
  p.spec = make_model(cfg, p.dataset);
  p.init = nn::init_params(p.spec, derive_seed(seed, 0x1417));
  training::TrainInputs inputs;
  inputs.dataset = &p.dataset;
  inputs.anchors = training::make_anchor_set(p.dataset, nullptr, 0);
  auto opts = config::train_options(cfg, derive_seed(seed, 0x3A));
  opts.epochs = cfg.integer("train.warmup_epochs");
  opts.rebuild_every = 0;
  auto warm = training::train(p.spec, p.init, inputs, config::great_config(cfg, training::Mode::Base), opts);
  p.warm = std::move(warm.params);
  p.warm_log = std::move(warm.log);
  return p;
}

bool uses_graph(training::Mode mode) { return training::terms_for(mode).any_edge(); }

std::optional<graph::SimilarityGraph> mode_graph(const config::RunConfig& cfg, const Prepared& prepared,
                                                 training::Mode mode) {
  if (!uses_graph(mode)) return std::nullopt;
  auto opts = config::graph_options(cfg);
  opts.adversarial_twins = needs_twins(mode);
  return training::build_training_graph(prepared.spec, prepared.warm, prepared.dataset, opts);
}

training::AnchorSet mode_anchors(const config::RunConfig& cfg, const Prepared& prepared,
                                 const graph::SimilarityGraph* graph) {
  if (graph && cfg.flag("train.pseudo_label")) {
    return training::make_anchor_set(prepared.dataset, graph, cfg.integer("train.propagation_passes"));
  }
  return training::make_anchor_set(prepared.dataset, nullptr, 0);
}

training::TrainResult train_mode(const config::RunConfig& cfg, const Prepared& prepared,
                                 training::Mode mode, const graph::SimilarityGraph* graph,
                                 const training::StepObserver& observer) {
  training::TrainInputs inputs;
  inputs.dataset = &prepared.dataset;
  inputs.graph = graph;
  inputs.anchors = mode_anchors(cfg, prepared, graph);
  const auto opts = config::train_options(cfg, derive_seed(prepared.seed, 0x7A));
  if (opts.rebuild_every > 0 && graph) {
    auto gopts = config::graph_options(cfg);
    gopts.adversarial_twins = needs_twins(mode);
    inputs.rebuild = [&prepared, gopts](const nn::ParamSet& params) {
      return training::build_training_graph(prepared.spec, params, prepared.dataset, gopts);
    };
  }
  return training::train(prepared.spec, prepared.warm, inputs, config::great_config(cfg, mode), opts, observer);
}

eval::ReportRow evaluate_test(const config::RunConfig& cfg, const Prepared& prepared,
                              const nn::ParamSet& params, training::Mode mode, double label_fraction) {
  const auto test = data::take(prepared.dataset, data::Split::Test);
  const auto norms = config::eval_norms(cfg);
  const auto eps = cfg.reals("eval.epsilons");
  auto row = eval::evaluate_row(prepared.spec, params, test.x, test.y, config::eval_attack(cfg), norms, eps);
  row.mode = training::to_string(mode);
  row.label_fraction = label_fraction;
  row.seed = prepared.seed;
  return row;
}

const ModeRun& Cell::run(training::Mode mode) const {
  for (const auto& r : runs) {
    if (r.mode == mode) return r;
  }
  throw LookupError("cell has no run for mode " + training::to_string(mode));
}

Cell run_cell(const config::RunConfig& cfg, double fraction, std::uint64_t seed,
              const std::vector<training::Mode>& modes) {
  Cell cell;
  cell.fraction = fraction;
  cell.seed = seed;
  const Prepared prepared = prepare(cfg, seed, fraction);
  // Graph variants are shared between modes: with and without adversarial twins.
  std::map<bool, graph::SimilarityGraph> graphs;
  for (auto mode : modes) {
    const graph::SimilarityGraph* graph = nullptr;
    if (uses_graph(mode)) {
      auto it = graphs.find(needs_twins(mode));
      if (it == graphs.end()) it = graphs.emplace(needs_twins(mode), *mode_graph(cfg, prepared, mode)).first;
      graph = &it->second;
    }
    ModeRun run;
    run.mode = mode;
    run.result = train_mode(cfg, prepared, mode, graph);
    run.row = evaluate_test(cfg, prepared, run.result.params, mode, fraction);
    cell.runs.push_back(std::move(run));
  }
  return cell;
}

std::vector<Cell> run_grid(const config::RunConfig& cfg, const std::vector<double>& fractions,
                           const std::vector<std::uint64_t>& seeds,
                           const std::vector<training::Mode>& modes, std::size_t jobs) {
  struct Task {
    double fraction;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (double f : fractions) {
    for (auto s : seeds) tasks.push_back({f, s});
  }
  std::vector<Cell> cells(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        cells[i] = run_cell(cfg, tasks[i].fraction, tasks[i].seed, modes);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = tasks.size();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return cells;
}

eval::EvalReport make_report(const config::RunConfig& cfg, const std::vector<Cell>& cells) {
  eval::EvalReport report;
  report.seed = cfg.integer("seed");
  report.config_fingerprint = cfg.fingerprint();
  for (const auto& cell : cells) {
    for (const auto& run : cell.runs) report.rows.push_back(run.row);
  }
  return report;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace great::pipeline
