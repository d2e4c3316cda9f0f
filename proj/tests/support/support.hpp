#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "great/attacks.hpp"
#include "great/embedgraph.hpp"
#include "great/great.hpp"
#include "great/nn.hpp"
#include "great/tape.hpp"
#include "great/tensor.hpp"

namespace great::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

/// Builds a scalar loss from the inputs, recorded as tape variables.
using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  Builder build;
  double h = 1e-5;
};

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a kink
  std::string worst;        // "input i, coordinate j"
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
// whose true gradient is zero from dividing by rounding noise.
inline constexpr double kRelFloor = 1e-6;

/// Central differences against the tape gradient for every input coordinate.
/// A coordinate is skipped when either perturbed evaluation takes a different
/// branch (kink signature) than the unperturbed one.
GradReport check_gradients(const GradCase& c);

/// sum(v * w) with w a fixed random tensor; turns any op into a scalar loss.
ad::Var weigh(ad::Var v, std::uint64_t seed);

/// One case per differentiable primitive.
std::vector<GradCase> primitive_cases(std::uint64_t seed);
/// great_loss with respect to model parameters on a 3-anchor micro-batch that
/// has every edge type; h = 1e-3.
std::vector<GradCase> composite_cases(std::uint64_t seed);

/// Micro-batch used by the composite cases: 3 anchors, 4 neighbors, one edge
/// of each type plus an isolated-free clean edge set.
training::TrainingBatch micro_batch(const nn::ModelSpec& spec, std::uint64_t seed, double tau, std::size_t k);

/// O(n^2) reference: for every node, all others with cosine >= tau sorted by
/// weight descending then id ascending, truncated to k; optional mutual filter.
std::vector<std::vector<graph::EdgeRecord>> brute_force_edges(const std::vector<graph::NodeRecord>& nodes,
                                                              const graph::BuildOptions& options);

/// Random node set with deliberate duplicate and near-duplicate embeddings so
/// weight ties occur.
std::vector<graph::NodeRecord> random_nodes(std::size_t n, std::size_t dim, std::uint64_t seed);

struct AttackCheck {
  std::size_t cases = 0;
  std::size_t ball_violations = 0;
  std::size_t clip_violations = 0;
  std::size_t saturation_violations = 0;
  std::size_t identity_violations = 0;
  double worst_identity_gap = 0.0;
  std::string first_failure;

  bool ok() const {
    return ball_violations == 0 && clip_violations == 0 && saturation_violations == 0 && identity_violations == 0;
  }
};

/// Randomized FGSM/PGD cases over small MLPs and CNN-free inputs.
AttackCheck check_attack_invariants(std::size_t cases, std::uint64_t seed);

}  // namespace great::testing
