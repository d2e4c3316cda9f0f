#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "great/attacks.hpp"
#include "great/nn.hpp"
#include "great/tensor.hpp"

namespace great::eval {

/// Fraction of rows whose argmax logit (lowest index on ties) equals the
/// label. Eval mode. Throws ContractError on an empty split.
double accuracy(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                std::span<const int> y);

/// Accuracy on white-box adversarial inputs generated against the same model.
double robust_accuracy(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                       std::span<const int> y, const attacks::AttackConfig& attack);

struct CurvePoint {
  double epsilon = 0.0;
  double accuracy = 0.0;
};

/// Robust accuracy at every epsilon of an ascending, nonnegative grid; all
/// other attack settings come from `attack`.
std::vector<CurvePoint> epsilon_sweep(const nn::ModelSpec& spec, const nn::ParamSet& params,
                                      const Tensor& x, std::span<const int> y,
                                      attacks::AttackConfig attack, std::span<const double> grid);
std::string curve_csv(const std::vector<CurvePoint>& curve);

struct GridPoint {
  attacks::Norm norm = attacks::Norm::Linf;
  double epsilon = 0.0;
  double robust_acc = 0.0;
};

struct ReportRow {
  std::string mode;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;
  double clean_acc = 0.0;
  std::vector<GridPoint> robust;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::uint64_t seed = 0;
  std::string config_fingerprint;

  /// Accuracies in [0, 1]; grid points ascending in epsilon per norm.
  void validate() const;
};

/// Evaluates one model over a (norm x epsilon) grid; points come back sorted.
ReportRow evaluate_row(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                       std::span<const int> y, const attacks::AttackConfig& attack_template,
                       std::span<const attacks::Norm> norms, std::span<const double> epsilons);

/// Header: mode,label_fraction,seed,norm,epsilon,clean_acc,robust_acc,config_fingerprint
/// One line per (row, grid point); rows without grid points emit norm "none".
std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);

}  // namespace great::eval
