#include "great/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "great/errors.hpp"
#include "great/io.hpp"
#include "great/random.hpp"

namespace great::config {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot read '" + value + "' as " + expected);
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) bad_value(key, text, "a number");
  return v;
}

std::uint64_t parse_integer(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    bad_value(key, text, "a nonnegative integer");
  }
  return v;
}

template <typename F>
auto keyed(const std::string& key, F&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.find(key) != std::string::npos) throw;
    throw ConfigError("config key '" + key + "': " + what);
  }
}

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", "Base seed for data, initialization and training"},
      {"output.dir", "", "Output directory (default: $GREAT_OUT_ROOT or ./runs)"},
      {"dataset.kind", "two_moons", "two_moons | blobs | idx | csv"},
      {"dataset.n", "1000", "Sample count for synthetic datasets"},
      {"dataset.noise", "0.1", "Gaussian noise sd for two_moons"},
      {"dataset.classes", "3", "Cluster count for blobs"},
      {"dataset.spread", "0.15", "Cluster sd for blobs"},
      {"dataset.images", "", "IDX image file (kind=idx)"},
      {"dataset.labels", "", "IDX label file (kind=idx)"},
      {"dataset.csv", "", "CSV file (kind=csv)"},
      {"dataset.label_column", "label", "Label column name (kind=csv)"},
      {"dataset.height", "0", "Resize images to this height (0 keeps the native size)"},
      {"dataset.width", "0", "Resize images to this width (0 keeps the native size)"},
      {"dataset.label_fraction", "1", "Fraction of train samples that keep their label"},
      {"model.kind", "mlp", "mlp | cnn"},
      {"model.hidden", "32,32", "MLP hidden widths"},
      {"model.filters", "8,16", "CNN filters per block"},
      {"model.extended", "false", "CNN: two conv layers per block"},
      {"model.dense_width", "32", "CNN: width of the embedding layer"},
      {"model.dropout", "0.25", "CNN: dropout rate (0 disables)"},
      {"model.batchnorm", "true", "CNN: batch normalization after each block"},
      {"train.mode", "great", "base | nsl | at | great_adv | great"},
      {"train.epochs", "200", "Epochs of the regularized phase"},
      {"train.warmup_epochs", "20", "Epochs of base training before the graph is built"},
      {"train.batch_size", "32", "Anchors per batch"},
      {"train.optimizer", "adam", "adam | sgd"},
      {"train.learning_rate", "0.001", "Optimizer step size"},
      {"train.rebuild_every", "0", "Rebuild the graph every n epochs (0 keeps it static)"},
      {"train.propagation_passes", "1", "Label propagation passes"},
      {"train.pseudo_label", "true", "Train graph modes on pseudo-labeled samples too"},
      {"great.lambda", "1", "Neighbor regularizer scale"},
      {"great.alpha11", "1", "Weight of clean->clean edges"},
      {"great.alpha12", "1", "Weight of clean->adversarial edges"},
      {"great.alpha21", "1", "Weight of adversarial->clean edges"},
      {"great.alpha22", "1", "Weight of adversarial->adversarial edges"},
      {"great.alpha3", "1", "Weight of the adversarial supervised term"},
      {"great.metric", "l2_squared", "l1 | l2_squared"},
      {"great.k", "2", "Neighbors per node"},
      {"great.tau", "0.8", "Similarity threshold"},
      {"great.mutual", "false", "Keep only mutual nearest-neighbor edges"},
      {"attack.method", "fgsm", "Training-time attack: fgsm | pgd"},
      {"attack.norm", "linf", "linf | l2"},
      {"attack.epsilon", "0.2", "Training-time perturbation budget"},
      {"attack.steps", "1", "PGD steps"},
      {"attack.step_size", "0", "PGD step (0 picks the default)"},
      {"attack.random_start", "false", "PGD random start"},
      {"eval.method", "fgsm", "Evaluation attack: fgsm | pgd"},
      {"eval.steps", "10", "PGD steps for evaluation"},
      {"eval.norms", "linf,l2", "Norms of the evaluation grid"},
      {"eval.epsilons", "0,0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4", "Epsilons of the evaluation grid"},
      {"sweep.modes", "base,nsl,at,great_adv,great", "Modes compared by sweep"},
      {"sweep.fractions", "0.2,0.5,0.8", "Label fractions compared by sweep"},
      {"sweep.seeds", "0,1,2,3,4", "Seeds run by sweep"},
      {"sweep.lambdas", "", "Lambda values swept (empty uses great.lambda)"},
      {"attack.split", "test", "Split perturbed by the attack command: train | val | test"},
      {"input.checkpoint", "", "Checkpoint read by graph, eval and attack"},
      {"input.graph", "", "Graph file read by train (built from the warm-start model when empty)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.key] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return parse(io::read_file(path), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_real(key, get(key)); }

std::uint64_t RunConfig::integer(const std::string& key) const { return parse_integer(key, get(key)); }

bool RunConfig::flag(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_real(key, item));
  return out;
}

std::vector<std::uint64_t> RunConfig::integers(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_integer(key, item));
  return out;
}

std::vector<std::string> RunConfig::words(const std::string& key) const { return split_list(get(key)); }

void RunConfig::validate() const {
  integer("seed");
  const auto kind = get("dataset.kind");
  if (kind != "two_moons" && kind != "blobs" && kind != "idx" && kind != "csv") {
    bad_value("dataset.kind", kind, "two_moons, blobs, idx or csv");
  }
  for (const char* key : {"dataset.n", "dataset.classes", "dataset.height", "dataset.width", "model.dense_width",
                          "train.epochs", "train.warmup_epochs", "train.batch_size", "train.rebuild_every",
                          "train.propagation_passes", "eval.steps"}) {
    integer(key);
  }
  for (const char* key : {"dataset.noise", "dataset.spread", "model.dropout"}) {
    if (real(key) < 0.0) bad_value(key, get(key), "a nonnegative number");
  }
  const double fraction = real("dataset.label_fraction");
  if (!(fraction > 0.0 && fraction <= 1.0)) bad_value("dataset.label_fraction", get("dataset.label_fraction"), "a fraction in (0, 1]");
  const auto model = get("model.kind");
  if (model != "mlp" && model != "cnn") bad_value("model.kind", model, "mlp or cnn");
  integers("model.hidden");
  integers("model.filters");
  for (const char* key : {"model.extended", "model.batchnorm", "train.pseudo_label", "great.mutual", "attack.random_start"}) {
    flag(key);
  }
  const auto opt = get("train.optimizer");
  if (opt != "adam" && opt != "sgd") bad_value("train.optimizer", opt, "adam or sgd");
  if (integer("train.batch_size") < 1) bad_value("train.batch_size", get("train.batch_size"), "an integer >= 1");
  if (!(real("train.learning_rate") > 0.0)) bad_value("train.learning_rate", get("train.learning_rate"), "a positive number");
  keyed("train.mode", [&] { return training::mode_from_string(get("train.mode")); });
  great_config(*this).validate();
  eval_attack(*this).validate();
  eval_norms(*this);
  for (double eps : reals("eval.epsilons")) {
    if (eps < 0.0) bad_value("eval.epsilons", get("eval.epsilons"), "nonnegative numbers");
  }
  sweep_modes(*this);
  for (double f : reals("sweep.fractions")) {
    if (!(f > 0.0 && f <= 1.0)) bad_value("sweep.fractions", get("sweep.fractions"), "fractions in (0, 1]");
  }
  integers("sweep.seeds");
  for (double l : reals("sweep.lambdas")) {
    if (l < 0.0) bad_value("sweep.lambdas", get("sweep.lambdas"), "nonnegative numbers");
  }
  const auto split = get("attack.split");
  if (split != "train" && split != "val" && split != "test") bad_value("attack.split", split, "train, val or test");
}

std::string RunConfig::snapshot() const {
  std::string out;
  for (const auto& k : schema()) out += k.key + " = " + values_.at(k.key) + "\n";
  return out;
}

// The output location does not change what a run computes, so it is left out.
std::string RunConfig::fingerprint() const {
  std::string text;
  for (const auto& k : schema()) {
    if (k.key != "output.dir") text += k.key + " = " + values_.at(k.key) + "\n";
  }
  return io::fingerprint(text);
}

attacks::AttackConfig training_attack(const RunConfig& cfg) {
  attacks::AttackConfig a;
  a.method = keyed("attack.method", [&] { return attacks::method_from_string(cfg.get("attack.method")); });
  a.norm = keyed("attack.norm", [&] { return attacks::norm_from_string(cfg.get("attack.norm")); });
  a.epsilon = cfg.real("attack.epsilon");
  a.steps = cfg.integer("attack.steps");
  a.step_size = cfg.real("attack.step_size");
  a.random_start = cfg.flag("attack.random_start");
  a.seed = derive_seed(cfg.integer("seed"), 0xA77);
  keyed("attack", [&] { a.validate(); return 0; });
  return a;
}

attacks::AttackConfig eval_attack(const RunConfig& cfg) {
  attacks::AttackConfig a;
  a.method = keyed("eval.method", [&] { return attacks::method_from_string(cfg.get("eval.method")); });
  a.steps = a.method == attacks::Method::Fgsm ? 1 : cfg.integer("eval.steps");
  a.seed = derive_seed(cfg.integer("seed"), 0xE7A);
  return a;
}

std::vector<attacks::Norm> eval_norms(const RunConfig& cfg) {
  std::vector<attacks::Norm> out;
  for (const auto& w : cfg.words("eval.norms")) {
    out.push_back(keyed("eval.norms", [&] { return attacks::norm_from_string(w); }));
  }
  if (out.empty()) bad_value("eval.norms", cfg.get("eval.norms"), "a list of norms");
  return out;
}

training::GreatConfig great_config(const RunConfig& cfg) {
  return great_config(cfg, keyed("train.mode", [&] { return training::mode_from_string(cfg.get("train.mode")); }));
}

training::GreatConfig great_config(const RunConfig& cfg, training::Mode mode) {
  training::GreatConfig g;
  g.mode = mode;
  g.lambda = cfg.real("great.lambda");
  g.alpha11 = cfg.real("great.alpha11");
  g.alpha12 = cfg.real("great.alpha12");
  g.alpha21 = cfg.real("great.alpha21");
  g.alpha22 = cfg.real("great.alpha22");
  g.alpha3 = cfg.real("great.alpha3");
  g.metric = keyed("great.metric", [&] { return training::metric_from_string(cfg.get("great.metric")); });
  g.k = cfg.integer("great.k");
  g.tau = cfg.real("great.tau");
  g.attack = training_attack(cfg);
  for (const char* key : {"great.lambda", "great.alpha11", "great.alpha12", "great.alpha21", "great.alpha22", "great.alpha3"}) {
    if (!(cfg.real(key) >= 0.0)) bad_value(key, cfg.get(key), "a nonnegative number");
  }
  if (!(g.tau >= 0.0 && g.tau <= 1.0)) bad_value("great.tau", cfg.get("great.tau"), "a threshold in [0, 1]");
  keyed("great", [&] { g.validate(); return 0; });
  return g;
}

training::TrainOptions train_options(const RunConfig& cfg, std::uint64_t seed) {
  training::TrainOptions o;
  o.epochs = cfg.integer("train.epochs");
  o.batch_size = cfg.integer("train.batch_size");
  o.optimizer = cfg.get("train.optimizer") == "sgd" ? nn::OptimizerKind::Sgd : nn::OptimizerKind::Adam;
  o.learning_rate = cfg.real("train.learning_rate");
  o.rebuild_every = cfg.integer("train.rebuild_every");
  o.seed = seed;
  return o;
}

training::GraphOptions graph_options(const RunConfig& cfg) {
  training::GraphOptions o;
  o.tau = cfg.real("great.tau");
  o.k = cfg.integer("great.k");
  o.mutual = cfg.flag("great.mutual");
  o.attack = training_attack(cfg);
  return o;
}

std::vector<training::Mode> sweep_modes(const RunConfig& cfg) {
  std::vector<training::Mode> out;
  for (const auto& w : cfg.words("sweep.modes")) {
    out.push_back(keyed("sweep.modes", [&] { return training::mode_from_string(w); }));
  }
  return out;
}

}  // namespace great::config
