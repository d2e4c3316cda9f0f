#include "great/nn.hpp"

#include <cmath>
#include <json.hpp>

#include "great/errors.hpp"
#include "great/io.hpp"
#include "great/random.hpp"

namespace great::nn {

using nlohmann::json;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::BatchNorm: return "batchnorm";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::Dense, LayerKind::Conv, LayerKind::MaxPool, LayerKind::Relu,
                 LayerKind::Flatten, LayerKind::Dropout, LayerKind::BatchNorm}) {
    if (to_string(k) == name) return k;
  }
  throw ParseError("unknown layer kind '" + name + "'");
}

Layer Layer::dense(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.in = in;
  l.out = out;
  return l;
}

Layer Layer::conv(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout) {
  Layer l;
  l.kind = LayerKind::Conv;
  l.kh = kh;
  l.kw = kw;
  l.cin = cin;
  l.cout = cout;
  return l;
}

Layer Layer::maxpool(std::size_t window) {
  Layer l;
  l.kind = LayerKind::MaxPool;
  l.window = window;
  return l;
}

Layer Layer::relu() { return Layer{}; }

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::Flatten;
  return l;
}

Layer Layer::dropout(double rate) {
  Layer l;
  l.kind = LayerKind::Dropout;
  l.rate = rate;
  return l;
}

Layer Layer::batchnorm(double momentum) {
  Layer l;
  l.kind = LayerKind::BatchNorm;
  l.rate = momentum;
  return l;
}

std::vector<Shape> ModelSpec::output_shapes() const {
  if (input_shape.empty()) throw DimensionError("model input shape is empty");
  std::vector<Shape> shapes;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Dense:
        if (cur.size() != 1 || cur[0] != l.in) {
          throw DimensionError(where + " expects [" + std::to_string(l.in) + "], got " +
                               shape_string(cur));
        }
        cur = {l.out};
        break;
      case LayerKind::Conv:
        if (cur.size() != 3 || cur[2] != l.cin || l.kh > cur[0] || l.kw > cur[1] || l.kh == 0 ||
            l.kw == 0 || l.cout == 0) {
          throw DimensionError(where + " cannot take input " + shape_string(cur));
        }
        cur = {cur[0] - l.kh + 1, cur[1] - l.kw + 1, l.cout};
        break;
      case LayerKind::MaxPool:
        if (cur.size() != 3 || l.window == 0 || cur[0] % l.window || cur[1] % l.window) {
          throw DimensionError(where + " window does not divide " + shape_string(cur));
        }
        cur = {cur[0] / l.window, cur[1] / l.window, cur[2]};
        break;
      case LayerKind::Flatten:
        cur = {shape_product(cur)};
        break;
      case LayerKind::Dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) throw ContractError(where + " rate outside [0,1)");
        break;
      case LayerKind::Relu:
      case LayerKind::BatchNorm:
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void ModelSpec::validate() const {
  if (layers.empty()) throw ContractError("model has no layers");
  if (class_count == 0) throw ContractError("class_count must be positive");
  const auto shapes = output_shapes();
  std::size_t last_dense = layers.size();
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].kind == LayerKind::Dense) {
      last_dense = i;
      break;
    }
  }
  if (last_dense == layers.size()) throw ContractError("model has no dense output layer");
  if (shapes.back() != Shape{class_count}) {
    throw DimensionError("model output " + shape_string(shapes.back()) + " does not match " +
                         std::to_string(class_count) + " classes");
  }
  if (embedding_layer >= last_dense) {
    throw ContractError("embedding layer " + std::to_string(embedding_layer) +
                        " must precede the final dense layer " + std::to_string(last_dense));
  }
}

std::size_t ModelSpec::embedding_dim() const { return shape_product(output_shapes().at(embedding_layer)); }

ModelSpec make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes) {
  if (hidden.empty()) throw ContractError("make_mlp needs at least one hidden layer");
  ModelSpec spec;
  spec.input_shape = {inputs};
  std::size_t prev = inputs;
  for (std::size_t h : hidden) {
    spec.layers.push_back(Layer::dense(prev, h));
    spec.layers.push_back(Layer::relu());
    prev = h;
  }
  spec.embedding_layer = spec.layers.size() - 1;
  spec.layers.push_back(Layer::dense(prev, classes));
  spec.class_count = classes;
  spec.validate();
  return spec;
}

ModelSpec make_cnn(std::size_t height, std::size_t width, std::size_t channels, std::size_t classes,
                   const CnnOptions& options) {
  ModelSpec spec;
  spec.input_shape = {height, width, channels};
  std::size_t cin = channels;
  for (std::size_t f : options.filters) {
    const int convs = options.extended ? 2 : 1;
    for (int c = 0; c < convs; ++c) {
      spec.layers.push_back(Layer::conv(3, 3, cin, f));
      if (options.batchnorm) spec.layers.push_back(Layer::batchnorm());
      spec.layers.push_back(Layer::relu());
      cin = f;
    }
    spec.layers.push_back(Layer::maxpool(2));
  }
  spec.layers.push_back(Layer::flatten());
  const auto shapes = spec.output_shapes();
  spec.layers.push_back(Layer::dense(shapes.back()[0], options.dense_width));
  spec.layers.push_back(Layer::relu());
  spec.embedding_layer = spec.layers.size() - 1;
  if (options.dropout > 0.0) spec.layers.push_back(Layer::dropout(options.dropout));
  spec.layers.push_back(Layer::dense(options.dense_width, classes));
  spec.class_count = classes;
  spec.validate();
  return spec;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto shapes = spec.output_shapes();
  ParamSet set;
  set.seed = seed;
  Rng rng(derive_seed(seed, 0x1417));
  auto he_uniform = [&rng](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape), 0.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-limit, limit);
    return t;
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (l.kind) {
      case LayerKind::Dense:
        set.params.push_back({prefix + "weight", he_uniform({l.in, l.out}, l.in), true});
        set.params.push_back({prefix + "bias", Tensor({l.out}, 0.0), true});
        break;
      case LayerKind::Conv:
        set.params.push_back({prefix + "kernel", he_uniform({l.kh, l.kw, l.cin, l.cout}, l.kh * l.kw * l.cin), true});
        set.params.push_back({prefix + "bias", Tensor({l.cout}, 0.0), true});
        break;
      case LayerKind::BatchNorm: {
        const std::size_t c = (i == 0 ? spec.input_shape : shapes[i - 1]).back();
        set.params.push_back({prefix + "gamma", Tensor({c}, 1.0), true});
        set.params.push_back({prefix + "beta", Tensor({c}, 0.0), true});
        set.params.push_back({prefix + "running_mean", Tensor({c}, 0.0), false});
        set.params.push_back({prefix + "running_var", Tensor({c}, 1.0), false});
        break;
      }
      default:
        break;
    }
  }
  return set;
}

Bound bind(ad::Tape& tape, const ParamSet& params, bool requires_grad) {
  Bound b;
  b.vars.reserve(params.size());
  for (const auto& p : params.params) {
    b.vars.push_back(requires_grad && p.trainable ? tape.variable(p.value) : tape.constant(p.value));
  }
  return b;
}

std::vector<Tensor> gradients(const Bound& bound, const ParamSet& params) {
  std::vector<Tensor> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Var v = bound.vars.at(i);
    if (params.params[i].trainable && v.tape->requires_grad(v.id)) grads[i] = v.grad();
  }
  return grads;
}

namespace {

constexpr double kBatchNormEps = 1e-3;

std::size_t param_count(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense:
    case LayerKind::Conv: return 2;
    case LayerKind::BatchNorm: return 4;
    default: return 0;
  }
}

}  // namespace

ForwardResult forward(const ModelSpec& spec, const ParamSet& params, const Bound& bound,
                      ad::Var input, const ForwardOptions& options) {
  const Tensor& in = input.value();
  Shape expected = spec.input_shape;
  expected.insert(expected.begin(), in.rows());
  if (in.shape() != expected) {
    throw DimensionError("forward: batch " + shape_string(in.shape()) + " does not match model input " +
                         shape_string(spec.input_shape));
  }
  if (bound.vars.size() != params.size()) throw ContractError("forward: params not bound to this tape");
  ForwardResult result;
  ad::Var x = input;
  std::size_t slot = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Dense:
        if (x.value().rank() != 2) x = ad::flatten(x);
        x = ad::add_bias(ad::matmul(x, bound.vars[slot]), bound.vars[slot + 1]);
        break;
      case LayerKind::Conv:
        x = ad::add_bias(ad::conv2d(x, bound.vars[slot]), bound.vars[slot + 1]);
        break;
      case LayerKind::MaxPool:
        x = ad::max_pool2d(x, l.window);
        break;
      case LayerKind::Relu:
        x = ad::relu(x);
        break;
      case LayerKind::Flatten:
        x = ad::flatten(x);
        break;
      case LayerKind::Dropout:
        if (options.training && l.rate > 0.0) {
          Rng rng(derive_seed(options.dropout_seed, 0xD0, i));
          Tensor mask(x.value().shape(), 0.0);
          const double keep = 1.0 - l.rate;
          for (double& m : mask.values()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
          x = ad::mul(x, x.tape->constant(std::move(mask)));
        }
        break;
      case LayerKind::BatchNorm:
        if (options.training) {
          ad::BatchStats stats;
          x = ad::batch_norm_train(x, bound.vars[slot], bound.vars[slot + 1], kBatchNormEps, &stats);
          result.batch_stats.push_back(std::move(stats));
        } else {
          x = ad::batch_norm_eval(x, bound.vars[slot], bound.vars[slot + 1],
                                  params.params[slot + 2].value, params.params[slot + 3].value,
                                  kBatchNormEps);
        }
        break;
    }
    slot += param_count(l.kind);
    if (i == spec.embedding_layer) result.embedding = ad::flatten(x);
  }
  result.logits = x;
  return result;
}

void update_running_stats(const ModelSpec& spec, ParamSet& params,
                          const std::vector<ad::BatchStats>& stats) {
  std::size_t slot = 0, k = 0;
  for (const Layer& l : spec.layers) {
    if (l.kind == LayerKind::BatchNorm) {
      const auto& s = stats.at(k++);
      Tensor& mean = params.params[slot + 2].value;
      Tensor& var = params.params[slot + 3].value;
      for (std::size_t j = 0; j < mean.size(); ++j) {
        mean[j] = l.rate * mean[j] + (1.0 - l.rate) * s.mean[j];
        var[j] = l.rate * var[j] + (1.0 - l.rate) * s.variance[j];
      }
    }
    slot += param_count(l.kind);
  }
}

Prediction predict(const ModelSpec& spec, const ParamSet& params, const Tensor& batch) {
  ad::Tape tape;
  const Bound bound = bind(tape, params, false);
  const auto out = forward(spec, params, bound, tape.constant(batch));
  return Prediction{out.logits.value(), out.embedding.value()};
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  const std::size_t c = logits.row_size();
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits[r * c + j] > logits[r * c + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

OptimizerState make_optimizer(OptimizerKind kind, double learning_rate, const ParamSet& params) {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  OptimizerState s;
  s.kind = kind;
  s.learning_rate = learning_rate;
  if (kind == OptimizerKind::Adam) {
    for (const auto& p : params.params) {
      s.m.emplace_back(p.value.shape(), 0.0);
      s.v.emplace_back(p.value.shape(), 0.0);
    }
  }
  return s;
}

void step(ParamSet& params, OptimizerState& state, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw ContractError("step: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.params[i].trainable && grads[i].shape() != params.params[i].value.shape()) {
      throw ContractError("step: missing gradient for " + params.params[i].name);
    }
  }
  if (state.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params.params[i].trainable) continue;
      Tensor& p = params.params[i].value;
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= state.learning_rate * grads[i][j];
    }
    return;
  }
  if (state.m.size() != params.size()) throw ContractError("step: optimizer state does not match parameters");
  ++state.timestep;
  const double t = static_cast<double>(state.timestep);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.params[i].trainable) continue;
    Tensor& p = params.params[i].value;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr int kCheckpointVersion = 1;

json layer_to_json(const Layer& l) {
  json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::Dense: j["in"] = l.in; j["out"] = l.out; break;
    case LayerKind::Conv: j["kh"] = l.kh; j["kw"] = l.kw; j["cin"] = l.cin; j["cout"] = l.cout; break;
    case LayerKind::MaxPool: j["window"] = l.window; break;
    case LayerKind::Dropout: j["rate"] = l.rate; break;
    case LayerKind::BatchNorm: j["momentum"] = l.rate; break;
    default: break;
  }
  return j;
}

Layer layer_from_json(const json& j) {
  Layer l;
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::Dense: l.in = j.at("in"); l.out = j.at("out"); break;
    case LayerKind::Conv: l.kh = j.at("kh"); l.kw = j.at("kw"); l.cin = j.at("cin"); l.cout = j.at("cout"); break;
    case LayerKind::MaxPool: l.window = j.at("window"); break;
    case LayerKind::Dropout: l.rate = j.at("rate"); break;
    case LayerKind::BatchNorm: l.rate = j.at("momentum"); break;
    default: break;
  }
  return l;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& checkpoint) {
  json model{{"input_shape", checkpoint.spec.input_shape},
             {"embedding_layer", checkpoint.spec.embedding_layer},
             {"class_count", checkpoint.spec.class_count},
             {"layers", json::array()}};
  for (const auto& l : checkpoint.spec.layers) model["layers"].push_back(layer_to_json(l));
  json params = json::array();
  for (const auto& p : checkpoint.params.params) {
    if (!p.value.all_finite()) throw NumericError("checkpoint: parameter " + p.name + " is not finite");
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"trainable", p.trainable},
                      {"values", p.value.storage()}});
  }
  json doc{{"format", "great-checkpoint"},
           {"version", kCheckpointVersion},
           {"seed", checkpoint.params.seed},
           {"model", model},
           {"meta", checkpoint.meta},
           {"params", params}};
  return doc.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (doc.at("format") != "great-checkpoint") throw ParseError("checkpoint: wrong format tag");
    if (doc.at("version") != kCheckpointVersion) {
      throw ParseError("checkpoint: unsupported version " + doc.at("version").dump());
    }
    Checkpoint c;
    const json& m = doc.at("model");
    c.spec.input_shape = m.at("input_shape").get<Shape>();
    c.spec.embedding_layer = m.at("embedding_layer");
    c.spec.class_count = m.at("class_count");
    for (const auto& l : m.at("layers")) c.spec.layers.push_back(layer_from_json(l));
    c.spec.validate();
    c.params.seed = doc.at("seed");
    c.meta = doc.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& p : doc.at("params")) {
      c.params.params.push_back({p.at("name").get<std::string>(),
                                 Tensor(p.at("shape").get<Shape>(), p.at("values").get<std::vector<double>>()),
                                 p.at("trainable").get<bool>()});
    }
    const ParamSet reference = init_params(c.spec, 0);
    if (reference.size() != c.params.size()) throw ParseError("checkpoint: parameter count does not match model");
    for (std::size_t i = 0; i < reference.size(); ++i) {
      if (reference.params[i].value.shape() != c.params.params[i].value.shape()) {
        throw ParseError("checkpoint: parameter " + c.params.params[i].name + " has wrong shape");
      }
    }
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  io::atomic_write(path, checkpoint_to_json(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing checkpoint " + path.string());
  return checkpoint_from_json(io::read_file(path));
}

}  // namespace great::nn
