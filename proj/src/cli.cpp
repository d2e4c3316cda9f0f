#include "great/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "great/errors.hpp"
#include "great/eval.hpp"
#include "great/io.hpp"
#include "great/pipeline.hpp"
#include "great/random.hpp"

namespace great::cli {

namespace fs = std::filesystem;

namespace {

fs::path require_input(const config::RunConfig& cfg, const std::string& key) {
  const std::string& value = cfg.get(key);
  if (value.empty()) throw ConfigError("config key '" + key + "' must name an existing file");
  if (!fs::exists(value)) throw IoError("missing input file '" + value + "' (" + key + ")");
  return value;
}

void write_snapshot(const config::RunConfig& cfg, const fs::path& dir) {
  io::atomic_write(dir / "config.resolved.ini", cfg.snapshot());
}

data::Dataset labeled_dataset(const config::RunConfig& cfg, std::uint64_t seed) {
  auto ds = pipeline::make_dataset(cfg, seed);
  const double fraction = cfg.real("dataset.label_fraction");
  return fraction < 1.0 ? data::subsample_labels(ds, fraction, derive_seed(seed, 0x5B)) : ds;
}

nn::Checkpoint load_model(const config::RunConfig& cfg) {
  return nn::load_checkpoint(require_input(cfg, "input.checkpoint"));
}

std::string checkpoint_meta(const nn::Checkpoint& ck, const std::string& key, const std::string& fallback) {
  auto it = ck.meta.find(key);
  return it == ck.meta.end() ? fallback : it->second;
}

data::Split split_from_string(const std::string& name) {
  if (name == "train") return data::Split::Train;
  if (name == "val") return data::Split::Val;
  return data::Split::Test;
}

std::string tag(double v) {
  std::string s = io::format_double(v);
  for (char& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

void write_sweep(const config::RunConfig& cfg, const fs::path& dir, std::size_t jobs) {
  const auto modes = config::sweep_modes(cfg);
  const auto fractions = cfg.reals("sweep.fractions");
  const auto seeds = cfg.integers("sweep.seeds");
  const auto cells = pipeline::run_grid(cfg, fractions, seeds, modes, jobs);
  const auto report = pipeline::make_report(cfg, cells);
  io::atomic_write(dir / "report.csv", eval::report_csv(report));
  io::atomic_write(dir / "report.json", eval::report_json(report));

  for (const auto& cell : cells) {
    for (const auto& run : cell.runs) {
      std::map<attacks::Norm, std::vector<eval::CurvePoint>> curves;
      for (const auto& p : run.row.robust) curves[p.norm].push_back({p.epsilon, p.robust_acc});
      for (const auto& [norm, curve] : curves) {
        const std::string name = run.row.mode + "_f" + tag(cell.fraction) + "_s" + std::to_string(cell.seed) +
                                 "_" + attacks::to_string(norm) + ".csv";
        io::atomic_write(dir / "curves" / name, eval::curve_csv(curve));
      }
      const std::string log = run.row.mode + "_f" + tag(cell.fraction) + "_s" + std::to_string(cell.seed) + ".csv";
      io::atomic_write(dir / "logs" / log, training::training_log_csv(run.result.log));
    }
  }

  // Medians over seeds, one line per (mode, fraction, norm, epsilon).
  std::ostringstream summary;
  summary << "mode,label_fraction,norm,epsilon,median_clean_acc,median_robust_acc,seeds\n";
  for (auto mode : modes) {
    for (double f : fractions) {
      std::vector<const eval::ReportRow*> rows;
      for (const auto& cell : cells) {
        if (cell.fraction == f) rows.push_back(&cell.run(mode).row);
      }
      if (rows.empty()) continue;
      std::vector<double> clean;
      for (const auto* r : rows) clean.push_back(r->clean_acc);
      const double clean_median = pipeline::median(clean);
      for (std::size_t g = 0; g < rows.front()->robust.size(); ++g) {
        std::vector<double> robust;
        for (const auto* r : rows) robust.push_back(r->robust[g].robust_acc);
        const auto& point = rows.front()->robust[g];
        summary << training::to_string(mode) << ',' << io::format_double(f) << ','
                << attacks::to_string(point.norm) << ',' << io::format_double(point.epsilon) << ','
                << io::format_double(clean_median) << ',' << io::format_double(pipeline::median(robust)) << ','
                << rows.size() << '\n';
      }
    }
  }
  io::atomic_write(dir / "summary.csv", summary.str());
  write_snapshot(cfg, dir);
}

}  // namespace

fs::path output_dir(const config::RunConfig& cfg, const std::string& command) {
  const std::string& dir = cfg.get("output.dir");
  if (!dir.empty()) return dir;
  if (const char* root = std::getenv("GREAT_OUT_ROOT"); root && *root) return fs::path(root) / command;
  return fs::path("runs") / command;
}

TrainArtifacts cmd_train(const config::RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = output_dir(cfg, "train");
  const std::uint64_t seed = cfg.integer("seed");
  const double fraction = cfg.real("dataset.label_fraction");
  const auto mode = training::mode_from_string(cfg.get("train.mode"));

  std::optional<graph::SimilarityGraph> graph;
  if (pipeline::uses_graph(mode) && !cfg.get("input.graph").empty()) {
    graph = graph::load_graph(require_input(cfg, "input.graph"));
    if (graph->tau() != cfg.real("great.tau") || graph->k() != cfg.integer("great.k")) {
      throw ConfigError("config key 'input.graph': graph was built with tau=" + io::format_double(graph->tau()) +
                        " k=" + std::to_string(graph->k()) + ", config has tau=" + cfg.get("great.tau") +
                        " k=" + cfg.get("great.k"));
    }
  }
  const auto prepared = pipeline::prepare(cfg, seed, fraction);
  if (pipeline::uses_graph(mode) && !graph) graph = pipeline::mode_graph(cfg, prepared, mode);
  const auto result = pipeline::train_mode(cfg, prepared, mode, graph ? &*graph : nullptr);

  nn::Checkpoint ck;
  ck.spec = prepared.spec;
  ck.params = result.params;
  ck.meta = {{"mode", training::to_string(mode)},
             {"seed", std::to_string(seed)},
             {"label_fraction", io::format_double(fraction)},
             {"epochs", cfg.get("train.epochs")},
             {"warmup_epochs", cfg.get("train.warmup_epochs")},
             {"config_fingerprint", cfg.fingerprint()}};

  TrainArtifacts out;
  out.checkpoint = dir / "checkpoint.json";
  out.log = dir / "training_log.csv";
  out.config = dir / "config.resolved.ini";
  if (graph) {
    out.graph = dir / "graph.txt";
    graph::save_graph(*graph, out.graph);
  }
  if (!prepared.warm_log.empty()) io::atomic_write(dir / "warmup_log.csv", training::training_log_csv(prepared.warm_log));
  io::atomic_write(out.log, training::training_log_csv(result.log));
  nn::save_checkpoint(ck, out.checkpoint);
  write_snapshot(cfg, dir);
  return out;
}

fs::path cmd_graph(const config::RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = output_dir(cfg, "graph");
  const auto ck = load_model(cfg);
  const auto ds = labeled_dataset(cfg, cfg.integer("seed"));
  auto opts = config::graph_options(cfg);
  opts.adversarial_twins = training::mode_from_string(cfg.get("train.mode")) != training::Mode::Nsl;
  const auto graph = training::build_training_graph(ck.spec, ck.params, ds, opts);
  const fs::path path = dir / "graph.txt";
  graph::save_graph(graph, path);
  write_snapshot(cfg, dir);
  return path;
}

EvalArtifacts cmd_eval(const config::RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = output_dir(cfg, "eval");
  const auto ck = load_model(cfg);
  const std::uint64_t seed = cfg.integer("seed");
  const auto ds = labeled_dataset(cfg, seed);
  const auto test = data::take(ds, data::Split::Test);
  const auto norms = config::eval_norms(cfg);
  auto row = eval::evaluate_row(ck.spec, ck.params, test.x, test.y, config::eval_attack(cfg), norms,
                                cfg.reals("eval.epsilons"));
  row.mode = checkpoint_meta(ck, "mode", cfg.get("train.mode"));
  row.label_fraction = std::stod(checkpoint_meta(ck, "label_fraction", cfg.get("dataset.label_fraction")));
  row.seed = seed;

  eval::EvalReport report;
  report.seed = seed;
  report.config_fingerprint = cfg.fingerprint();
  report.rows.push_back(std::move(row));
  EvalArtifacts out{dir / "report.csv", dir / "report.json"};
  io::atomic_write(out.csv, eval::report_csv(report));
  io::atomic_write(out.json, eval::report_json(report));
  write_snapshot(cfg, dir);
  return out;
}

fs::path cmd_sweep(const config::RunConfig& cfg, std::size_t jobs) {
  cfg.validate();
  const fs::path dir = output_dir(cfg, "sweep");
  const auto lambdas = cfg.reals("sweep.lambdas");
  if (lambdas.size() <= 1) {
    config::RunConfig local = cfg;
    if (lambdas.size() == 1) local.set("great.lambda", cfg.get("sweep.lambdas"));
    write_sweep(local, dir, jobs);
    return dir;
  }
  for (double lambda : lambdas) {
    config::RunConfig local = cfg;
    local.set("great.lambda", io::format_double(lambda));
    local.set("sweep.lambdas", io::format_double(lambda));
    write_sweep(local, dir / ("lambda_" + tag(lambda)), jobs);
  }
  write_snapshot(cfg, dir);
  return dir;
}

fs::path cmd_attack(const config::RunConfig& cfg) {
  cfg.validate();
  const fs::path dir = output_dir(cfg, "attack");
  const auto ck = load_model(cfg);
  const auto ds = labeled_dataset(cfg, cfg.integer("seed"));
  const auto subset = data::take(ds, split_from_string(cfg.get("attack.split")));
  if (subset.index.empty()) throw ContractError("attack: the " + cfg.get("attack.split") + " split is empty");
  const auto adv = attacks::generate(ck.spec, ck.params, subset.x, subset.y, config::training_attack(cfg));
  const auto clean_pred = nn::argmax_rows(nn::predict(ck.spec, ck.params, subset.x).logits);
  const auto adv_pred = nn::argmax_rows(nn::predict(ck.spec, ck.params, adv.perturbed).logits);

  std::ostringstream csv;
  const std::size_t d = adv.perturbed.row_size();
  csv << "sample,label,clean_pred,adv_pred";
  for (std::size_t j = 0; j < d; ++j) csv << ",x" << j;
  csv << '\n';
  for (std::size_t i = 0; i < subset.index.size(); ++i) {
    csv << subset.index[i] << ',' << subset.y[i] << ',' << clean_pred[i] << ',' << adv_pred[i];
    for (double v : adv.perturbed.row(i)) csv << ',' << io::format_double(v);
    csv << '\n';
  }
  const fs::path path = dir / "adversarial.csv";
  io::atomic_write(path, csv.str());
  write_snapshot(cfg, dir);
  return path;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Graph-regularized adversarial training: train, build graphs, attack, evaluate and sweep."};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  app.add_option("--config", config_path, "Config file of key = value lines");
  app.add_option("--seed", seed, "Seed (overrides the seed key)");
  app.add_option("--out", out, "Output directory (overrides output.dir)");
  app.add_option("--jobs", jobs, "Parallel sweep cells")->check(CLI::PositiveNumber);

  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> flags;
  for (const auto& key : config::schema()) {
    if (key.key == "seed" || key.key == "output.dir") continue;
    const std::string def = key.default_value.empty() ? "empty" : key.default_value;
    flags[key.key] = app.add_option("--" + key.key, overrides[key.key], key.help + " [default: " + def + "]")
                         ->group("Config keys");
  }

  app.add_subcommand("train", "Warm-start, build the graph, train one mode; writes checkpoint and log");
  app.add_subcommand("graph", "Build a similarity graph from input.checkpoint");
  app.add_subcommand("eval", "Clean and robust accuracy of input.checkpoint on the test split");
  app.add_subcommand("sweep", "Compare modes over label fractions and seeds");
  app.add_subcommand("attack", "Write adversarial versions of one split for input.checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    config::RunConfig cfg = config_path.empty() ? config::RunConfig() : config::RunConfig::load(config_path);
    for (const auto& [key, option] : flags) {
      if (option->count() > 0) cfg.set(key, overrides[key]);
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (!out.empty()) cfg.set("output.dir", out);

    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "train") {
      const auto a = cmd_train(cfg);
      std::cout << "checkpoint: " << a.checkpoint.string() << "\nlog: " << a.log.string() << '\n';
    } else if (command == "graph") {
      std::cout << "graph: " << cmd_graph(cfg).string() << '\n';
    } else if (command == "eval") {
      const auto a = cmd_eval(cfg);
      std::cout << "report: " << a.csv.string() << '\n';
    } else if (command == "sweep") {
      std::cout << "sweep: " << cmd_sweep(cfg, jobs).string() << '\n';
    } else {
      std::cout << "adversarial: " << cmd_attack(cfg).string() << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace great::cli
