#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "great/config.hpp"
#include "great/data.hpp"
#include "great/eval.hpp"
#include "great/great.hpp"
#include "great/nn.hpp"

namespace great::pipeline {

/// Dataset named by the dataset.* keys with train/val/test tags; every train
/// sample labeled.
data::Dataset make_dataset(const config::RunConfig& cfg, std::uint64_t seed);
nn::ModelSpec make_model(const config::RunConfig& cfg, const data::Dataset& dataset);

/// Dataset with the label fraction applied, plus the warm-start base model
/// every mode continues from.
struct Prepared {
  data::Dataset dataset;
  nn::ModelSpec spec;
  nn::ParamSet init;
  nn::ParamSet warm;
  std::vector<training::EpochRecord> warm_log;
  std::uint64_t seed = 0;
};
Prepared prepare(const config::RunConfig& cfg, std::uint64_t seed, double label_fraction);

bool uses_graph(training::Mode mode);
/// Modes with a clean->adversarial or adversarial-anchored term.
bool needs_twins(training::Mode mode);
/// Graph built from the warm-start embeddings. Adversarial twins are added
/// only for modes with adversarial terms. nullopt for modes without a graph.
std::optional<graph::SimilarityGraph> mode_graph(const config::RunConfig& cfg, const Prepared& prepared,
                                                 training::Mode mode);
training::AnchorSet mode_anchors(const config::RunConfig& cfg, const Prepared& prepared,
                                 const graph::SimilarityGraph* graph);

training::TrainResult train_mode(const config::RunConfig& cfg, const Prepared& prepared,
                                 training::Mode mode, const graph::SimilarityGraph* graph,
                                 const training::StepObserver& observer = {});

/// Clean and robust accuracy on the test split over the eval.* grid.
eval::ReportRow evaluate_test(const config::RunConfig& cfg, const Prepared& prepared,
                              const nn::ParamSet& params, training::Mode mode, double label_fraction);

struct ModeRun {
  training::Mode mode = training::Mode::Base;
  training::TrainResult result;
  eval::ReportRow row;
};

struct Cell {
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::vector<ModeRun> runs;

  const ModeRun& run(training::Mode mode) const;
};

Cell run_cell(const config::RunConfig& cfg, double fraction, std::uint64_t seed,
              const std::vector<training::Mode>& modes);

/// Every (fraction, seed) cell, up to `jobs` at a time. Results come back in
/// fraction-major, seed-minor order regardless of scheduling.
std::vector<Cell> run_grid(const config::RunConfig& cfg, const std::vector<double>& fractions,
                           const std::vector<std::uint64_t>& seeds,
                           const std::vector<training::Mode>& modes, std::size_t jobs = 1);

eval::EvalReport make_report(const config::RunConfig& cfg, const std::vector<Cell>& cells);

/// Median over cells of a per-cell statistic.
double median(std::vector<double> values);

}  // namespace great::pipeline
