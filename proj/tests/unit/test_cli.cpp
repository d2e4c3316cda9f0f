#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "great/cli.hpp"
#include "great/config.hpp"
#include "great/embedgraph.hpp"
#include "great/errors.hpp"
#include "great/io.hpp"
#include "great/nn.hpp"
#include "great/pipeline.hpp"
#include "great/random.hpp"

namespace fs = std::filesystem;
namespace cfgns = great::config;
namespace cli = great::cli;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "great_cli_test" / name;
  fs::remove_all(dir);
  return dir;
}

cfgns::RunConfig small(const fs::path& out) {
  cfgns::RunConfig c;
  c.set("dataset.n", "100");
  c.set("model.hidden", "8,8");
  c.set("train.epochs", "3");
  c.set("train.warmup_epochs", "2");
  c.set("eval.epsilons", "0,0.2");
  c.set("output.dir", out.string());
  return c;
}

struct Captured {
  int code = 0;
  std::string out;
  std::string err;
};

Captured run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "great");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Captured c;
  c.code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  c.out = out.str();
  c.err = err.str();
  return c;
}

}  // namespace

TEST_CASE("config parsing with sections, comments and errors") {
  auto c = cfgns::RunConfig::parse("seed = 4\n# note\n[great]\nlambda = 0.5 ; trailing\n\n[train]\nmode = nsl\n");
  CHECK(c.integer("seed") == 4);
  CHECK(c.real("great.lambda") == 0.5);
  CHECK(c.get("train.mode") == "nsl");
  CHECK(c.get("great.tau") == "0.8");
  try {
    cfgns::RunConfig::parse("seed = 1\n[great]\nlamda = 2\n", "run.ini");
    FAIL("expected ConfigError");
  } catch (const great::ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("great.lamda") != std::string::npos);
    CHECK(what.find("run.ini:3") != std::string::npos);
  }
  CHECK_THROWS_AS(cfgns::RunConfig::parse("seed 1\n"), great::ConfigError);
  CHECK_THROWS_AS(cfgns::RunConfig::parse("[great\n"), great::ConfigError);
  cfgns::RunConfig d;
  CHECK_THROWS_AS(d.set("nope", "1"), great::ConfigError);
}

TEST_CASE("validation names the offending key") {
  for (auto [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"great.lambda", "-1"}, {"great.tau", "1.5"}, {"attack.epsilon", "x"}, {"train.mode", "gan"},
           {"sweep.fractions", "0.2,1.5"}, {"eval.epsilons", "0,-0.1"}, {"train.batch_size", "0"}}) {
    cfgns::RunConfig c;
    c.set(key, value);
    try {
      c.validate();
      FAIL("expected ConfigError for " << key);
    } catch (const great::ConfigError& e) {
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  }
}

TEST_CASE("snapshot lists every key and fingerprints differ by value") {
  cfgns::RunConfig a, b;
  b.set("great.lambda", "2");
  const auto snap = a.snapshot();
  for (const auto& k : cfgns::schema()) CHECK(snap.find(k.key + " = ") != std::string::npos);
  CHECK(cfgns::RunConfig::parse(snap).snapshot() == snap);
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(a.fingerprint() == cfgns::RunConfig().fingerprint());
  auto c = a;
  c.set("output.dir", "elsewhere");
  CHECK(c.fingerprint() == a.fingerprint());
  CHECK(c.snapshot() != a.snapshot());
}

TEST_CASE("output directory resolution") {
  cfgns::RunConfig c;
  ::unsetenv("GREAT_OUT_ROOT");
  CHECK(cli::output_dir(c, "train") == fs::path("runs") / "train");
  ::setenv("GREAT_OUT_ROOT", "/tmp/great_root", 1);
  CHECK(cli::output_dir(c, "eval") == fs::path("/tmp/great_root") / "eval");
  c.set("output.dir", "/tmp/explicit");
  CHECK(cli::output_dir(c, "eval") == fs::path("/tmp/explicit"));
  ::unsetenv("GREAT_OUT_ROOT");
}

TEST_CASE("zero epochs writes the initialization") {
  auto dir = fresh_dir("init");
  auto c = small(dir);
  c.set("train.epochs", "0");
  c.set("train.warmup_epochs", "0");
  c.set("train.mode", "base");
  c.set("seed", "6");
  const auto a = cli::cmd_train(c);
  auto ck = great::nn::load_checkpoint(a.checkpoint);
  CHECK(ck.params == great::nn::init_params(ck.spec, great::derive_seed(6, 0x1417)));
  CHECK(ck.meta.at("mode") == "base");
  CHECK(fs::exists(dir / "config.resolved.ini"));
  CHECK(great::io::read_file(dir / "config.resolved.ini") == c.snapshot());
}

TEST_CASE("training artifacts are byte-identical across reruns") {
  auto d1 = fresh_dir("rerun1"), d2 = fresh_dir("rerun2");
  auto c1 = small(d1), c2 = small(d2);
  const auto a = cli::cmd_train(c1);
  const auto b = cli::cmd_train(c2);
  CHECK(great::io::read_file(a.log) == great::io::read_file(b.log));
  CHECK(great::io::read_file(a.graph) == great::io::read_file(b.graph));
  CHECK(great::nn::load_checkpoint(a.checkpoint).params == great::nn::load_checkpoint(b.checkpoint).params);
  CHECK(fs::exists(d1 / "warmup_log.csv"));
}

TEST_CASE("graph command respects the k per node bound and round-trips") {
  auto dir = fresh_dir("graph");
  auto c = small(dir / "train");
  c.set("train.mode", "base");
  const auto a = cli::cmd_train(c);
  c.set("output.dir", (dir / "graph").string());
  c.set("input.checkpoint", a.checkpoint.string());
  c.set("train.mode", "great");
  const auto path = cli::cmd_graph(c);
  const auto g = great::graph::load_graph(path);
  std::size_t clean_anchored = 0, clean_nodes = 0;
  for (const auto& n : g.nodes()) {
    if (n.is_adversarial) continue;
    ++clean_nodes;
    clean_anchored += g.adjacency(n.id).size();
  }
  CHECK(clean_nodes <= 100);
  CHECK(clean_anchored <= 2 * 100);
  CHECK(g.edge_count() <= 2 * g.node_count());
  CHECK(g.node_count() > clean_nodes);
  CHECK(great::graph::parse(great::graph::serialize(g)) == g);
}

TEST_CASE("eval with a zero grid reports clean accuracy") {
  auto dir = fresh_dir("eval");
  auto c = small(dir / "train");
  c.set("train.mode", "at");
  const auto a = cli::cmd_train(c);
  c.set("output.dir", (dir / "eval").string());
  c.set("input.checkpoint", a.checkpoint.string());
  c.set("eval.epsilons", "0");
  const auto r = cli::cmd_eval(c);
  std::istringstream csv(great::io::read_file(r.csv));
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    REQUIRE(f.size() == 8);
    CHECK(f[0] == "at");
    CHECK(f[4] == "0");
    CHECK(f[5] == f[6]);
  }
  CHECK(rows == 2);
  CHECK(fs::exists(r.json));
}

TEST_CASE("attack command writes one row per split sample") {
  auto dir = fresh_dir("attack");
  auto c = small(dir / "train");
  c.set("train.mode", "base");
  const auto a = cli::cmd_train(c);
  c.set("output.dir", (dir / "attack").string());
  c.set("input.checkpoint", a.checkpoint.string());
  const auto path = cli::cmd_attack(c);
  const auto text = great::io::read_file(path);
  CHECK(text.rfind("sample,label,clean_pred,adv_pred,x0,x1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 11);
}

TEST_CASE("tiny sweep writes reports, curves, logs and medians") {
  auto dir = fresh_dir("sweep");
  auto c = small(dir);
  c.set("sweep.modes", "base,great");
  c.set("sweep.fractions", "0.5");
  c.set("sweep.seeds", "0,1");
  c.set("eval.norms", "linf");
  const auto out = cli::cmd_sweep(c, 2);
  CHECK(fs::exists(out / "report.csv"));
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "summary.csv"));
  CHECK(fs::exists(out / "curves" / "great_f0p5_s1_linf.csv"));
  CHECK(fs::exists(out / "logs" / "base_f0p5_s0.csv"));
  const auto report = great::io::read_file(out / "report.csv");
  CHECK(std::count(report.begin(), report.end(), '\n') == 1 + 2 * 2 * 2);

  auto serial_dir = fresh_dir("sweep_serial");
  auto s = c;
  s.set("output.dir", serial_dir.string());
  cli::cmd_sweep(s, 1);
  CHECK(great::io::read_file(serial_dir / "summary.csv") == great::io::read_file(out / "summary.csv"));
}

TEST_CASE("lambda sweep writes one directory per value") {
  auto dir = fresh_dir("lambdas");
  auto c = small(dir);
  c.set("train.epochs", "1");
  c.set("sweep.modes", "great");
  c.set("sweep.fractions", "1");
  c.set("sweep.seeds", "0");
  c.set("sweep.lambdas", "0,0.5");
  cli::cmd_sweep(c, 1);
  CHECK(fs::exists(dir / "lambda_0" / "report.csv"));
  CHECK(fs::exists(dir / "lambda_0p5" / "report.csv"));
}

TEST_CASE("exit codes and flag handling") {
  auto dir = fresh_dir("codes");
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"train", "--no-such-flag", "1"}).code == 2);
  auto bad_value = run_cli({"train", "--great.lambda", "-1", "--out", dir.string()});
  CHECK(bad_value.code == 2);
  CHECK(bad_value.err.find("great.lambda") != std::string::npos);
  auto missing = run_cli({"eval", "--input.checkpoint", (dir / "none.json").string(), "--out", dir.string()});
  CHECK(missing.code == 3);
  CHECK(missing.err.find("none.json") != std::string::npos);
  CHECK(run_cli({"train", "--config", (dir / "absent.ini").string()}).code == 3);
  CHECK_FALSE(fs::exists(dir / "report.csv"));

  auto help = run_cli({"--help"});
  CHECK(help.code == 0);
  for (const auto& k : cfgns::schema()) {
    if (k.key == "seed" || k.key == "output.dir") continue;
    CHECK(help.out.find("--" + k.key) != std::string::npos);
  }
  for (const char* flag : {"--config", "--seed", "--out", "--jobs"}) CHECK(help.out.find(flag) != std::string::npos);
}

TEST_CASE("cli train run with a config file and overrides") {
  auto dir = fresh_dir("file");
  fs::create_directories(dir);
  great::io::atomic_write(dir / "run.ini", "[dataset]\nn = 100\n[model]\nhidden = 8\n[train]\nepochs = 2\nwarmup_epochs = 1\nmode = nsl\n");
  auto r = run_cli({"train", "--config", (dir / "run.ini").string(), "--seed", "3", "--out", (dir / "o").string(),
                    "--great.k", "3"});
  CHECK(r.code == 0);
  const auto snap = cfgns::RunConfig::load(dir / "o" / "config.resolved.ini");
  CHECK(snap.get("great.k") == "3");
  CHECK(snap.get("seed") == "3");
  CHECK(snap.get("train.mode") == "nsl");
  CHECK(fs::exists(dir / "o" / "graph.txt"));
}

TEST_CASE("failures leave no partial artifacts") {
  auto dir = fresh_dir("partial");
  fs::create_directories(dir);
  const auto trained = cli::cmd_train(small(dir / "train"));
  const auto text = great::io::read_file(trained.checkpoint);
  great::io::atomic_write(dir / "cut.json", text.substr(0, text.size() / 2));
  auto c = small(dir / "eval");
  c.set("input.checkpoint", (dir / "cut.json").string());
  CHECK_THROWS_AS(cli::cmd_eval(c), great::ParseError);
  CHECK_FALSE(fs::exists(dir / "eval" / "report.csv"));
  CHECK_FALSE(fs::exists(dir / "eval" / "config.resolved.ini"));

  std::size_t leftovers = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().filename().string().find(".tmp") != std::string::npos) ++leftovers;
  }
  CHECK(leftovers == 0);
}
