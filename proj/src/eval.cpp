#include "great/eval.hpp"

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "great/errors.hpp"
#include "great/io.hpp"

namespace great::eval {

namespace {

constexpr std::size_t kChunk = 512;

template <typename F>
double chunked_accuracy(const Tensor& x, std::span<const int> y, F&& predict_chunk) {
  if (x.empty() || x.rows() == 0) throw ContractError("accuracy: empty split");
  if (y.size() != x.rows()) throw DimensionError("accuracy: label count does not match inputs");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < x.rows(); start += kChunk) {
    const std::size_t end = std::min(x.rows(), start + kChunk);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Tensor xs = (start == 0 && end == x.rows()) ? x : x.select_rows(idx);
    const auto ys = y.subspan(start, end - start);
    const auto pred = predict_chunk(xs, ys);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ys[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

}  // namespace

double accuracy(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                std::span<const int> y) {
  return chunked_accuracy(x, y, [&](const Tensor& xs, std::span<const int>) {
    return nn::argmax_rows(nn::predict(spec, params, xs).logits);
  });
}

double robust_accuracy(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                       std::span<const int> y, const attacks::AttackConfig& attack) {
  attack.validate();
  return chunked_accuracy(x, y, [&](const Tensor& xs, std::span<const int> ys) {
    const auto adv = attacks::generate(spec, params, xs, ys, attack);
    return nn::argmax_rows(nn::predict(spec, params, adv.perturbed).logits);
  });
}

std::vector<CurvePoint> epsilon_sweep(const nn::ModelSpec& spec, const nn::ParamSet& params,
                                      const Tensor& x, std::span<const int> y,
                                      attacks::AttackConfig attack, std::span<const double> grid) {
  if (grid.empty()) throw ContractError("epsilon_sweep: empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0)) throw ContractError("epsilon_sweep: negative epsilon");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ContractError("epsilon_sweep: grid not ascending");
  }
  const double requested_step = attack.step_size;
  std::vector<CurvePoint> curve;
  for (double eps : grid) {
    attack.epsilon = eps;
    // An explicit PGD step larger than a small grid epsilon falls back to the default.
    attack.step_size = requested_step > eps ? 0.0 : requested_step;
    curve.push_back({eps, robust_accuracy(spec, params, x, y, attack)});
  }
  return curve;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "epsilon,accuracy\n";
  for (const auto& p : curve) out << io::format_double(p.epsilon) << ',' << io::format_double(p.accuracy) << '\n';
  return out.str();
}

void EvalReport::validate() const {
  for (const auto& row : rows) {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(row.clean_acc)) throw ContractError("report: clean accuracy outside [0, 1]");
    for (std::size_t i = 0; i < row.robust.size(); ++i) {
      if (!in_unit(row.robust[i].robust_acc)) throw ContractError("report: robust accuracy outside [0, 1]");
      if (i > 0 && row.robust[i].norm == row.robust[i - 1].norm &&
          row.robust[i].epsilon < row.robust[i - 1].epsilon) {
        throw ContractError("report: grid points not ascending in epsilon");
      }
    }
  }
}

ReportRow evaluate_row(const nn::ModelSpec& spec, const nn::ParamSet& params, const Tensor& x,
                       std::span<const int> y, const attacks::AttackConfig& attack_template,
                       std::span<const attacks::Norm> norms, std::span<const double> epsilons) {
  ReportRow row;
  row.clean_acc = accuracy(spec, params, x, y);
  std::vector<double> grid(epsilons.begin(), epsilons.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (auto norm : norms) {
    attacks::AttackConfig attack = attack_template;
    attack.norm = norm;
    for (const auto& p : epsilon_sweep(spec, params, x, y, attack, grid)) {
      row.robust.push_back({norm, p.epsilon, p.accuracy});
    }
  }
  return row;
}

std::string report_csv(const EvalReport& report) {
  report.validate();
  std::ostringstream out;
  out << "mode,label_fraction,seed,norm,epsilon,clean_acc,robust_acc,config_fingerprint\n";
  for (const auto& row : report.rows) {
    const std::string prefix = row.mode + ',' + io::format_double(row.label_fraction) + ',' +
                               std::to_string(row.seed) + ',';
    if (row.robust.empty()) {
      out << prefix << "none,," << io::format_double(row.clean_acc) << ",," << report.config_fingerprint << '\n';
    }
    for (const auto& p : row.robust) {
      out << prefix << attacks::to_string(p.norm) << ',' << io::format_double(p.epsilon) << ','
          << io::format_double(row.clean_acc) << ',' << io::format_double(p.robust_acc) << ','
          << report.config_fingerprint << '\n';
    }
  }
  return out.str();
}

std::string report_json(const EvalReport& report) {
  report.validate();
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["seed"] = report.seed;
  doc["config_fingerprint"] = report.config_fingerprint;
  doc["rows"] = ordered_json::array();
  for (const auto& row : report.rows) {
    ordered_json r;
    r["mode"] = row.mode;
    r["label_fraction"] = row.label_fraction;
    r["seed"] = row.seed;
    r["clean_acc"] = row.clean_acc;
    r["robust"] = ordered_json::array();
    for (const auto& p : row.robust) {
      r["robust"].push_back({{"norm", attacks::to_string(p.norm)}, {"epsilon", p.epsilon}, {"robust_acc", p.robust_acc}});
    }
    doc["rows"].push_back(std::move(r));
  }
  return doc.dump(2) + "\n";
}

}  // namespace great::eval
