#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "great/attacks.hpp"
#include "great/great.hpp"

namespace great::config {

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default, in snapshot order.
const std::vector<KeySpec>& schema();

/// Flat key = value settings. Files may group keys under [section] headers,
/// which prefix the keys that follow ("[great]" then "lambda = 1" sets
/// great.lambda). '#' and ';' start comments.
class RunConfig {
 public:
  RunConfig();

  /// Throws ConfigError naming the key (and line) for unknown keys or bad syntax.
  static RunConfig parse(const std::string& text, const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  double real(const std::string& key) const;
  std::uint64_t integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::uint64_t> integers(const std::string& key) const;
  std::vector<std::string> words(const std::string& key) const;

  /// Parses every typed view; throws ConfigError naming the first bad key.
  void validate() const;
  /// Fully resolved settings, one "key = value" line per schema entry.
  std::string snapshot() const;
  std::string fingerprint() const;

 private:
  std::map<std::string, std::string> values_;
};

attacks::AttackConfig training_attack(const RunConfig& cfg);
/// Attack template for evaluation; norm and epsilon are set per grid point.
attacks::AttackConfig eval_attack(const RunConfig& cfg);
std::vector<attacks::Norm> eval_norms(const RunConfig& cfg);
training::GreatConfig great_config(const RunConfig& cfg);
training::GreatConfig great_config(const RunConfig& cfg, training::Mode mode);
training::TrainOptions train_options(const RunConfig& cfg, std::uint64_t seed);
training::GraphOptions graph_options(const RunConfig& cfg);
std::vector<training::Mode> sweep_modes(const RunConfig& cfg);

}  // namespace great::config
