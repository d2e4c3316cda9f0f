#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "great/tape.hpp"
#include "great/tensor.hpp"

namespace great::nn {

enum class LayerKind { Dense, Conv, MaxPool, Relu, Flatten, Dropout, BatchNorm };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct Layer {
  LayerKind kind = LayerKind::Relu;
  // dense
  std::size_t in = 0;
  std::size_t out = 0;
  // conv
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t cin = 0;
  std::size_t cout = 0;
  // maxpool
  std::size_t window = 0;
  // dropout rate, or batchnorm momentum
  double rate = 0.0;

  static Layer dense(std::size_t in, std::size_t out);
  static Layer conv(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout);
  static Layer maxpool(std::size_t window);
  static Layer relu();
  static Layer flatten();
  static Layer dropout(double rate = 0.25);
  static Layer batchnorm(double momentum = 0.99);

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Layer topology of the classifier. The output of layer `embedding_layer`
/// (flattened to n x d) is the sample embedding used by the graph machinery.
struct ModelSpec {
  Shape input_shape;  // per-sample shape, e.g. {2} or {h, w, c}
  std::vector<Layer> layers;
  std::size_t embedding_layer = 0;
  std::size_t class_count = 0;

  /// Throws DimensionError when adjacent layers do not compose, ContractError
  /// when the embedding layer is not strictly before the final dense layer.
  void validate() const;
  /// Per-sample output shape of every layer.
  std::vector<Shape> output_shapes() const;
  std::size_t embedding_dim() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// in -> hidden... -> classes with ReLU; the embedding is the last hidden
/// activation (post-ReLU).
ModelSpec make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes);

struct CnnOptions {
  std::vector<std::size_t> filters = {8, 16};
  // Two conv layers per block instead of one (four total with two blocks).
  bool extended = false;
  std::size_t dense_width = 32;
  double dropout = 0.25;
  bool batchnorm = true;
};
/// conv3x3 -> relu -> pool2 blocks, then dense -> relu (embedding) -> dense.
ModelSpec make_cnn(std::size_t height, std::size_t width, std::size_t channels, std::size_t classes,
                   const CnnOptions& options = {});

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;

  friend bool operator==(const Param&, const Param&) = default;
};

struct ParamSet {
  std::vector<Param> params;
  std::uint64_t seed = 0;

  std::size_t size() const { return params.size(); }
  std::size_t scalar_count() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// He-uniform weights, zero biases, unit batchnorm scales. Same seed gives
/// bitwise-identical parameters.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Parameters recorded as tape leaves; trainable ones require grad.
struct Bound {
  std::vector<ad::Var> vars;
};
Bound bind(ad::Tape& tape, const ParamSet& params, bool requires_grad = true);
/// Gradients for every parameter; non-trainable entries are empty tensors.
std::vector<Tensor> gradients(const Bound& bound, const ParamSet& params);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

struct ForwardResult {
  ad::Var logits;
  ad::Var embedding;
  /// Batch statistics per batchnorm layer (training mode only), in layer order.
  std::vector<ad::BatchStats> batch_stats;
};

ForwardResult forward(const ModelSpec& spec, const ParamSet& params, const Bound& bound,
                      ad::Var input, const ForwardOptions& options = {});

/// Folds training-mode batch statistics into the running buffers.
void update_running_stats(const ModelSpec& spec, ParamSet& params,
                          const std::vector<ad::BatchStats>& stats);

struct Prediction {
  Tensor logits;
  Tensor embedding;
};
/// Eval-mode forward on plain tensors.
Prediction predict(const ModelSpec& spec, const ParamSet& params, const Tensor& batch);
std::vector<int> argmax_rows(const Tensor& logits);

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t timestep = 0;
};

OptimizerState make_optimizer(OptimizerKind kind, double learning_rate, const ParamSet& params);
/// One update of every trainable parameter. Throws ContractError if a
/// trainable parameter has no gradient of matching shape.
void step(ParamSet& params, OptimizerState& state, const std::vector<Tensor>& grads);

struct Checkpoint {
  ModelSpec spec;
  ParamSet params;
  std::map<std::string, std::string> meta;
};

/// JSON container: {"format","version","seed","model","meta","params":[{name,
/// shape, trainable, values}]}. Doubles are written in shortest round-trip
/// form, so load(save(x)) is bit-exact.
std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace great::nn
