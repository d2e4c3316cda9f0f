#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "great/nn.hpp"
#include "great/tensor.hpp"

namespace great::attacks {

enum class Method { Fgsm, Pgd };
enum class Norm { Linf, L2 };

std::string to_string(Method method);
std::string to_string(Norm norm);
Method method_from_string(const std::string& name);
Norm norm_from_string(const std::string& name);

struct AttackConfig {
  Method method = Method::Fgsm;
  Norm norm = Norm::Linf;
  double epsilon = 0.2;
  std::size_t steps = 1;
  // 0 selects the default: min(epsilon, 2.5 * epsilon / steps).
  double step_size = 0.0;
  double clip_min = 0.0;
  double clip_max = 1.0;
  bool random_start = false;
  std::uint64_t seed = 0;

  /// Throws ConfigError on an inconsistent budget.
  void validate() const;
  double effective_step_size() const;
};

AttackConfig fgsm_config(Norm norm, double epsilon);
AttackConfig pgd_config(Norm norm, double epsilon, std::size_t steps, double step_size = 0.0);

struct AdversarialBatch {
  Tensor originals;
  Tensor perturbed;
  std::vector<int> labels;
  Norm norm_used = Norm::Linf;
  double epsilon_used = 0.0;
};

/// Gradient of the summed cross-entropy with respect to the input batch.
/// Throws NumericError naming the first sample with a non-finite gradient.
Tensor input_gradient(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                      std::span<const int> y);

/// Per-sample norm of a - b.
double distance(std::span<const double> a, std::span<const double> b, Norm norm);

/// Projects every row of `candidate` onto the epsilon-ball around the
/// matching row of `origin`, then clips to [clip_min, clip_max].
void project(Tensor& candidate, const Tensor& origin, Norm norm, double epsilon, double clip_min,
             double clip_max);

AdversarialBatch fgsm(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                      std::span<const int> y, const AttackConfig& cfg);

using IterateObserver = std::function<void(std::size_t step, const Tensor& iterate)>;

AdversarialBatch pgd(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                     std::span<const int> y, const AttackConfig& cfg,
                     const IterateObserver& observer = {});

/// Dispatches on cfg.method.
AdversarialBatch generate(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                          std::span<const int> y, const AttackConfig& cfg);

}  // namespace great::attacks
