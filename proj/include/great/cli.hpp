#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "great/config.hpp"

namespace great::cli {

/// output.dir when set, else $GREAT_OUT_ROOT/<command>, else runs/<command>.
std::filesystem::path output_dir(const config::RunConfig& cfg, const std::string& command);

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path config;
  std::filesystem::path graph;  // empty for modes without a graph
};

/// Every command validates the config first and writes config.resolved.ini
/// next to its outputs. All files are written atomically.
TrainArtifacts cmd_train(const config::RunConfig& cfg);
std::filesystem::path cmd_graph(const config::RunConfig& cfg);

struct EvalArtifacts {
  std::filesystem::path csv;
  std::filesystem::path json;
};
EvalArtifacts cmd_eval(const config::RunConfig& cfg);
/// Returns the output directory; one subdirectory per lambda when
/// sweep.lambdas lists more than one value.
std::filesystem::path cmd_sweep(const config::RunConfig& cfg, std::size_t jobs);
std::filesystem::path cmd_attack(const config::RunConfig& cfg);

/// Full command line: parses flags, runs the subcommand, and maps failures to
/// exit codes (2 bad config or flags, 3 missing input, 1 anything else).
int run(int argc, const char* const* argv);

}  // namespace great::cli
