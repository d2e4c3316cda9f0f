#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "great/attacks.hpp"
#include "great/data.hpp"
#include "great/embedgraph.hpp"
#include "great/nn.hpp"
#include "great/tape.hpp"

namespace great::training {

enum class Mode { Base, Nsl, At, GreatAdv, Great };
enum class Metric { L1, L2Squared };

std::string to_string(Mode mode);
std::string to_string(Metric metric);
Mode mode_from_string(const std::string& name);
Metric metric_from_string(const std::string& name);

struct GreatConfig {
  Mode mode = Mode::Great;
  double lambda = 1.0;
  double alpha11 = 1.0;  // clean -> clean
  double alpha12 = 1.0;  // clean -> adversarial
  double alpha21 = 1.0;  // adversarial -> clean
  double alpha22 = 1.0;  // adversarial -> adversarial
  // Multiplier on the adversarial supervised term.
  double alpha3 = 1.0;
  Metric metric = Metric::L2Squared;
  std::size_t k = 2;
  double tau = 0.8;
  attacks::AttackConfig attack;

  /// Throws ConfigError on a negative weight or a bad attack budget.
  void validate() const;
};

/// Which loss terms a mode trains on.
struct Terms {
  bool supervised_clean = false;
  bool supervised_adv = false;
  bool cc = false;
  bool ca = false;
  bool ac = false;
  bool aa = false;

  bool edge(graph::EdgeType type) const;
  bool any_edge() const { return cc || ca || ac || aa; }
  bool clean_anchors() const { return supervised_clean || cc || ca; }
  bool adversarial_anchors() const { return supervised_adv || ac || aa; }
  bool adversarial_neighbors() const { return ca || aa; }
};
Terms terms_for(Mode mode);

/// Distance between two embeddings: sum |a - b| or sum (a - b)^2.
double neighbor_distance(std::span<const double> a, std::span<const double> b, Metric metric);

struct BatchEdge {
  std::size_t anchor = 0;        // row in the batch
  std::size_t neighbor_row = 0;  // row in TrainingBatch::neighbors
  double weight = 0.0;
  graph::EdgeType type = graph::EdgeType::CleanClean;
};

struct TrainingBatch {
  double tau = 0.0;
  std::size_t k = 0;
  std::vector<std::size_t> samples;  // dataset index of each anchor
  std::vector<int> labels;
  Tensor clean;
  Tensor adversarial;  // empty when the mode has no adversarial anchors
  Tensor neighbors;    // empty when no anchor has an edge
  std::vector<BatchEdge> edges;
  std::vector<std::uint8_t> isolated;  // anchor has no edges of an active type

  std::size_t size() const { return samples.size(); }
  /// Weights >= tau, at most k edges per anchor side, consistent row indices.
  void validate() const;
};

struct LossBreakdown {
  double supervised_clean = 0.0;
  double supervised_adv = 0.0;  // already scaled by alpha3
  double reg_cc = 0.0;
  double reg_ca = 0.0;
  double reg_ac = 0.0;
  double reg_aa = 0.0;
  double total = 0.0;
};

/// lambda * (a11 cc + a12 ca + a21 ac + a22 aa) + supervised terms, with the
/// weights a mode leaves out set to zero.
double combine(const LossBreakdown& parts, const GreatConfig& cfg);

struct LossGraph {
  ad::Var total;
  LossBreakdown breakdown;
  /// Batchnorm statistics of the anchor forward pass.
  std::vector<ad::BatchStats> batch_stats;
};

/// Records the objective for one batch on `tape`. Embeddings are recomputed
/// through `bound`, so the regularizers carry gradient. Throws ConfigError
/// when the batch was assembled with a different tau or k.
LossGraph great_loss(ad::Tape& tape, const nn::ModelSpec& spec, const nn::ParamSet& params,
                     const nn::Bound& bound, const TrainingBatch& batch, const GreatConfig& cfg,
                     const nn::ForwardOptions& options = {});
/// Loss value only, in eval mode.
LossBreakdown evaluate_loss(const nn::ModelSpec& spec, const nn::ParamSet& params,
                            const TrainingBatch& batch, const GreatConfig& cfg);

/// Per node: the given label where `labeled_mask` is set, otherwise the label
/// of the highest-weight out-neighbor that was labeled after the previous
/// pass. Passes update synchronously. Throws ContractError if no node is
/// labeled or a masked node carries no label.
std::vector<std::optional<int>> propagate_labels(const graph::SimilarityGraph& graph,
                                                 const std::vector<std::uint8_t>& labeled_mask,
                                                 std::size_t passes = 1);

/// Samples trained on as anchors, ascending by dataset index.
struct AnchorSet {
  std::vector<std::size_t> samples;
  std::vector<int> labels;
  std::size_t pseudo_labeled = 0;
};
/// Labeled train samples, plus clean nodes that received a pseudo-label when
/// `graph` is given and `passes` > 0.
AnchorSet make_anchor_set(const data::Dataset& dataset, const graph::SimilarityGraph* graph,
                          std::size_t passes);

struct GraphOptions {
  double tau = 0.8;
  std::size_t k = 2;
  bool mutual = false;
  // Adds an adversarial twin for every labeled train sample.
  bool adversarial_twins = true;
  attacks::AttackConfig attack;
};
/// Clean nodes for every train sample (ids 0..t-1 in index order), then
/// adversarial twins, embedded with `params`.
graph::SimilarityGraph build_training_graph(const nn::ModelSpec& spec, const nn::ParamSet& params,
                                            const data::Dataset& dataset,
                                            const GraphOptions& options);

/// Adversarial versions of selected samples, regenerated once per epoch.
struct AdversarialCache {
  std::vector<std::size_t> row_of;  // per dataset index; npos when absent
  Tensor features;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  bool has(std::size_t sample) const { return sample < row_of.size() && row_of[sample] != npos; }
};

class BatchAssembler {
 public:
  /// Throws ConfigError when batch_size < 1, ContractError when the graph
  /// references samples outside the dataset.
  BatchAssembler(const data::Dataset& dataset, const graph::SimilarityGraph* graph,
                 AnchorSet anchors, const GreatConfig& cfg, std::size_t batch_size,
                 std::uint64_t seed);

  const AnchorSet& anchors() const { return anchors_; }
  /// Anchor positions in visiting order for an epoch.
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  /// Samples the adversarial cache must cover, with the label to attack.
  std::vector<std::pair<std::size_t, int>> adversarial_targets() const;
  AdversarialCache regenerate(const nn::ModelSpec& spec, const nn::ParamSet& params) const;
  std::vector<TrainingBatch> epoch(std::size_t epoch, const AdversarialCache& cache) const;
  void set_graph(const graph::SimilarityGraph* graph);

 private:
  TrainingBatch assemble(std::span<const std::size_t> positions, const AdversarialCache& cache) const;

  const data::Dataset& dataset_;
  const graph::SimilarityGraph* graph_;
  AnchorSet anchors_;
  GreatConfig cfg_;
  Terms terms_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

struct TrainOptions {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // Rebuild the graph from current params every n epochs (0 keeps it static).
  std::size_t rebuild_every = 0;
  bool validation = true;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // mean over the epoch's steps
  double clean_val_acc = 0.0;
  double robust_val_acc = 0.0;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossBreakdown loss;
  const nn::ParamSet* params = nullptr;  // after the update
};
using StepObserver = std::function<void(const StepRecord&)>;

struct TrainInputs {
  const data::Dataset* dataset = nullptr;
  const graph::SimilarityGraph* graph = nullptr;
  AnchorSet anchors;
  // Required when TrainOptions::rebuild_every > 0.
  std::function<graph::SimilarityGraph(const nn::ParamSet&)> rebuild;
};

struct TrainResult {
  nn::ParamSet params;
  std::vector<EpochRecord> log;
};

/// Trains a copy of `params`. Throws NumericError naming the epoch when the
/// loss stops being finite.
TrainResult train(const nn::ModelSpec& spec, nn::ParamSet params, const TrainInputs& inputs,
                  const GreatConfig& cfg, const TrainOptions& options,
                  const StepObserver& observer = {});

/// epoch,supervised_clean,supervised_adv,reg_cc,reg_ca,reg_ac,reg_aa,total,clean_val_acc,robust_val_acc
std::string training_log_csv(const std::vector<EpochRecord>& log);

}  // namespace great::training
