#include "great/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "great/errors.hpp"

namespace great::ad {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_.at(id);
  if (!n.requires_grad) throw ContractError("grad requested for a node that does not require grad");
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool rg = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw ContractError("operation mixes variables from different tapes");
    rg = rg || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, rg, rg ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

void Tape::mix_kink(std::uint64_t bits) {
  kink_hash_ ^= bits;
  kink_hash_ *= 1099511628211ULL;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward called with a variable from another tape");
  const Node& target = nodes_.at(loss.id);
  if (target.value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(target.value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor{};
  if (!target.requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename F>
Var unary(Var a, Tensor out, F&& local_grad) {
  return a.tape->record(std::move(out), {a}, [a, local_grad](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& ga = t.grad_buffer(a.id);
    const Tensor& x = t.value(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * local_grad(x[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      const Tensor& bv = t.value(b.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b.id);
      const Tensor& av = t.value(a.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var add_bias(Var a, Var bias) {
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || av.shape().back() != bv.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) +
                         " does not match last axis of " + shape_string(av.shape()));
  }
  const std::size_t n = bv.size();
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return a.tape->record(std::move(out), {a, bias}, [a, bias, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bias)) {
      Tensor& gb = t.grad_buffer(bias.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      Tensor& gv = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.needs_grad(a)) {
      Tensor& ga = t.grad_buffer(a.id);
      const Tensor& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      Tensor& gb = t.grad_buffer(b.id);
      const Tensor& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  return unary(a, std::move(out), [factor](double) { return factor; });
}

Var relu(Var a) {
  Tensor out = a.value();
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = out[i] > 0.0;
    if (out[i] <= 0.0) out[i] = 0.0;  // NaN passes through
    bits = bits * 31 + (on ? 1 : 2);
  }
  a.tape->mix_kink(bits);
  return unary(a, std::move(out), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var a) {
  Tensor out = a.value();
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    bits = bits * 31 + (out[i] > 0.0 ? 1 : (out[i] < 0.0 ? 2 : 3));
    out[i] = std::fabs(out[i]);
  }
  a.tape->mix_kink(bits);
  return unary(a, std::move(out), [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= v;
  return unary(a, std::move(out), [](double x) { return 2.0 * x; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    for (double& v : t.grad_buffer(a.id).values()) v += g;
  });
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows(), w = av.row_size();
  Tensor out({n}, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += av[r * w + j];
    out[r] = s;
  }
  return a.tape->record(std::move(out), {a}, [a, n, w](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += g[r];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var flatten(Var a) {
  const Tensor& av = a.value();
  return reshape(a, {av.rows(), av.row_size()});
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Tensor out = a.value().select_rows(rows);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t w = a.value().row_size();
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx), w](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < w; ++j) ga[idx[r] * w + j] += g[r * w + j];
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& x = logits.value();
  if (x.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be [n x c], got " +
                                          shape_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  Tensor prob({n, c}, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " at row " +
                       std::to_string(r) + " outside [0, " + std::to_string(c) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(x[r * c + j] - mx);
      prob[r * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) prob[r * c + j] /= z;
    total += (mx + std::log(z)) - x[r * c + static_cast<std::size_t>(y)];
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape->record(
      Tensor::scalar(total / static_cast<double>(n)), {logits},
      [logits, prob = std::move(prob), ys = std::move(ys), n, c](Tape& t, std::size_t self) {
        const double g = t.grad_buffer(self)[0] / static_cast<double>(n);
        Tensor& gl = t.grad_buffer(logits.id);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double target = static_cast<std::size_t>(ys[r]) == j ? 1.0 : 0.0;
            gl[r * c + j] += g * (prob[r * c + j] - target);
          }
        }
      });
}

Var conv2d(Var input, Var kernel) {
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  if (x.rank() != 4 || k.rank() != 4 || x.dim(3) != k.dim(2)) {
    throw DimensionError("conv2d: incompatible input " + shape_string(x.shape()) + " and kernel " +
                         shape_string(k.shape()));
  }
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  if (kh > h || kw > w) {
    throw DimensionError("conv2d: kernel " + shape_string(k.shape()) + " larger than input " +
                         shape_string(x.shape()));
  }
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  Tensor out({n, oh, ow, cout}, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* o = &out[((b * oh + oy) * ow + ox) * cout];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double* xi = &x[((b * h + oy + ky) * w + ox + kx) * cin];
            const double* kk = &k[(ky * kw + kx) * cin * cout];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              for (std::size_t co = 0; co < cout; ++co) o[co] += xi[ci] * kk[ci * cout + co];
            }
          }
        }
      }
    }
  }
  return input.tape->record(std::move(out), {input, kernel},
                            [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& xv = t.value(input.id);
    const Tensor& kv = t.value(kernel.id);
    Tensor* gx = t.needs_grad(input) ? &t.grad_buffer(input.id) : nullptr;
    Tensor* gk = t.needs_grad(kernel) ? &t.grad_buffer(kernel.id) : nullptr;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double* go = &g[((b * oh + oy) * ow + ox) * cout];
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t xoff = ((b * h + oy + ky) * w + ox + kx) * cin;
              const std::size_t koff = (ky * kw + kx) * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                for (std::size_t co = 0; co < cout; ++co) {
                  if (gx) (*gx)[xoff + ci] += go[co] * kv[koff + ci * cout + co];
                  if (gk) (*gk)[koff + ci * cout + co] += go[co] * xv[xoff + ci];
                }
              }
            }
          }
        }
      }
    }
  });
}

Var max_pool2d(Var input, std::size_t window) {
  const Tensor& x = input.value();
  if (x.rank() != 4) throw DimensionError("max_pool2d: input must be [n,h,w,c], got " +
                                          shape_string(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw DimensionError("max_pool2d: window " + std::to_string(window) +
                         " does not divide spatial dims of " + shape_string(x.shape()));
  }
  const std::size_t ph = h / window, pw = w / window;
  Tensor out({n, ph, pw, c}, 0.0);
  std::vector<std::size_t> argmax(out.size());
  std::uint64_t bits = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t py = 0; py < ph; ++py) {
      for (std::size_t px = 0; px < pw; ++px) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + py * window) * w + px * window) * c + ch;
          for (std::size_t dy = 0; dy < window; ++dy) {
            for (std::size_t dx = 0; dx < window; ++dx) {
              const std::size_t idx = ((b * h + py * window + dy) * w + px * window + dx) * c + ch;
              if (x[idx] > x[best]) best = idx;
            }
          }
          const std::size_t o = ((b * ph + py) * pw + px) * c + ch;
          out[o] = x[best];
          argmax[o] = best;
          bits = bits * 31 + best;
        }
      }
    }
  }
  input.tape->mix_kink(bits);
  return input.tape->record(std::move(out), {input},
                            [input, argmax = std::move(argmax)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    Tensor& gx = t.grad_buffer(input.id);
    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
  });
}

namespace {

void check_norm_params(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("batch_norm: gamma/beta " + shape_string(gamma.shape()) +
                         " do not match channels of " + shape_string(x.shape()));
  }
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  const Tensor& xv = x.value();
  check_norm_params(xv, gamma.value(), beta.value());
  const std::size_t c = xv.shape().back();
  const std::size_t m = xv.size() / c;
  Tensor mean({c}, 0.0), var({c}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) mean[j] += xv[i * c + j];
  }
  for (std::size_t j = 0; j < c; ++j) mean[j] /= static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mean[j];
      var[j] += d * d;
    }
  }
  for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(m);
  Tensor inv_std({c}, 0.0);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor xhat(xv.shape(), 0.0);
  Tensor out(xv.shape(), 0.0);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mean[j]) * inv_std[j];
      xhat[i * c + j] = h;
      out[i * c + j] = gv[j] * h + bv[j];
    }
  }
  if (stats) *stats = BatchStats{mean, var};
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m,
                         c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& gv = t.value(gamma.id);
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        sum_g[j] += g[i * c + j];
        sum_gx[j] += g[i * c + j] * xhat[i * c + j];
      }
    }
    if (t.needs_grad(gamma)) {
      Tensor& gg = t.grad_buffer(gamma.id);
      for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
    }
    if (t.needs_grad(beta)) {
      Tensor& gb = t.grad_buffer(beta.id);
      for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
    }
    if (t.needs_grad(x)) {
      Tensor& gx = t.grad_buffer(x.id);
      const double md = static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double dxhat = g[i * c + j] * gv[j];
          gx[i * c + j] += inv_std[j] / md *
                           (md * dxhat - gv[j] * sum_g[j] - xhat[i * c + j] * gv[j] * sum_gx[j]);
        }
      }
    }
  });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& variance,
                    double eps) {
  const Tensor& xv = x.value();
  check_norm_params(xv, gamma.value(), beta.value());
  const std::size_t c = xv.shape().back();
  if (mean.shape() != Shape{c} || variance.shape() != Shape{c}) {
    throw DimensionError("batch_norm_eval: running statistics do not match channels");
  }
  const std::size_t m = xv.size() / c;
  Tensor inv_std({c}, 0.0);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(variance[j] + eps);
  Tensor xhat(xv.shape(), 0.0), out(xv.shape(), 0.0);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[i * c + j] - mean[j]) * inv_std[j];
      xhat[i * c + j] = h;
      out[i * c + j] = gv[j] * h + bv[j];
    }
  }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), m,
                         c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& gv = t.value(gamma.id);
    if (t.needs_grad(x)) {
      Tensor& gx = t.grad_buffer(x.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] * gv[j] * inv_std[j];
      }
    }
    if (t.needs_grad(gamma)) {
      Tensor& gg = t.grad_buffer(gamma.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
      }
    }
    if (t.needs_grad(beta)) {
      Tensor& gb = t.grad_buffer(beta.id);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    }
  });
}

}  // namespace great::ad
