// SPDX-License-Identifier: Apache-2.0
#include "reslora/merge.hpp"

#include <cmath>
#include <limits>

namespace reslora {

Matrix merged_forward(const MergedModel& model, const Matrix& x) {
  return base_forward(model.layers, x);
}

std::string to_string(MergeMethod m) {
  switch (m) {
    case MergeMethod::exact: return "exact";
    case MergeMethod::no: return "no";
    case MergeMethod::bi: return "bi";
    case MergeMethod::bw: return "bw";
  }
  return "no";
}

MergeMethod merge_method_from_string(const std::string& s) {
  if (s == "exact") return MergeMethod::exact;
  if (s == "no") return MergeMethod::no;
  if (s == "bi") return MergeMethod::bi;
  if (s == "bw") return MergeMethod::bw;
  throw std::invalid_argument("unknown merge method '" + s + "' (expected no|bi|bw|exact)");
}

double alpha_bi(const std::vector<NormWindow>& windows, std::size_t n) {
  if (n == 0 || n >= windows.size()) {
    throw MergeError("alpha_bi: layer " + std::to_string(n) + " has no previous window");
  }
  if (windows[n].empty() || windows[n - 1].empty()) {
    throw MergeError("alpha_bi: empty norm window at layer " + std::to_string(n) +
                     "; train the model first");
  }
  const double denom = windows[n].mean();
  if (denom == 0.0) {
    throw MergeError("alpha_bi: zero mean norm at layer " + std::to_string(n));
  }
  return windows[n - 1].mean() / denom;
}

double alpha_bw(const std::vector<Matrix>& merged_prefix, std::size_t n) {
  if (n == 0) {
    throw MergeError("alpha_bw: layer 0 merges exactly, no alpha* needed");
  }
  if (n == 1) return 1.0;  // W*_{n-2} undefined; neutral scale
  if (merged_prefix.size() < n) {
    throw MergeError("alpha_bw: layers before " + std::to_string(n) + " not merged yet");
  }
  const double denom = frobenius_norm(merged_prefix[n - 1]);
  if (denom == 0.0) {
    throw MergeError("alpha_bw: zero Frobenius norm of merged layer " + std::to_string(n - 1));
  }
  return frobenius_norm(merged_prefix[n - 2]) / denom;
}

std::pair<MergedModel, MergeReport> merge_bs(const ResLoraModel& model) {
  if (model.structure() != Structure::block_shortcut) {
    throw std::invalid_argument("merge_bs: model structure is " + to_string(model.structure()) +
                                ", expected bs");
  }
  MergedModel merged;
  MergeReport report;
  report.method = "exact_bs";
  for (int n = 0; n < model.depth(); ++n) {
    const auto& layer = model.layers()[n];
    Matrix w_star = layer.base.w;
    const int m_eff = effective_m(n, model.pre_num(), model.depth());
    for (int k = 0; k <= m_eff; ++k) {
      const auto& prev = model.layers()[n - k].adapter;
      add_scaled(w_star, layer.adapter.scale, matmul(prev.b, prev.a));
    }
    merged.layers.push_back({std::move(w_star), layer.base.activation});
    report.alpha_star.push_back(1.0);
  }
  return {std::move(merged), std::move(report)};
}

std::pair<MergedModel, MergeReport> merge_is(const ResLoraModel& model, MergeMethod method,
                                             const std::vector<NormWindow>* windows) {
  if (model.structure() != Structure::input_shortcut) {
    throw std::invalid_argument("merge_is: model structure is " + to_string(model.structure()) +
                                ", expected is");
  }
  if (method == MergeMethod::exact) {
    throw std::invalid_argument("merge_is: no exact merge exists for the input shortcut");
  }
  if (method == MergeMethod::bi && (windows == nullptr || windows->empty())) {
    throw MergeError("merge_is: method bi needs the norm windows collected in training");
  }

  MergedModel merged;
  MergeReport report;
  report.method = to_string(method);
  std::vector<Matrix> merged_w;  // front-to-back so alpha_bw sees merged weights

  for (int n = 0; n < model.depth(); ++n) {
    const auto& layer = model.layers()[n];
    double alpha = 0.0;
    if (n == 0) {
      alpha = 1.0;  // x_{-1} := x_0 makes the first layer exact
    } else {
      switch (method) {
        case MergeMethod::no: alpha = 0.0; break;
        case MergeMethod::bi: alpha = alpha_bi(*windows, static_cast<std::size_t>(n)); break;
        case MergeMethod::bw: alpha = alpha_bw(merged_w, static_cast<std::size_t>(n)); break;
        case MergeMethod::exact: break;  // unreachable
      }
    }
    Matrix w_star = layer.base.w;
    add_scaled(w_star, (1.0 + alpha) * layer.adapter.scale,
               matmul(layer.adapter.b, layer.adapter.a));
    merged_w.push_back(w_star);
    merged.layers.push_back({std::move(w_star), layer.base.activation});
    report.alpha_star.push_back(alpha);
  }
  return {std::move(merged), std::move(report)};
}

MsMergeResult merge_ms(const ResLoraModel& model, MergeMethod method,
                       const std::vector<NormWindow>* windows) {
  if (model.structure() != Structure::middle_shortcut) {
    throw std::invalid_argument("merge_ms: model structure is " + to_string(model.structure()) +
                                ", expected ms");
  }
  if (method == MergeMethod::exact) {
    throw std::invalid_argument("merge_ms: no exact merge exists for the middle shortcut");
  }
  if (method == MergeMethod::bi && (windows == nullptr || windows->empty())) {
    throw MergeError("merge_ms: method bi needs the norm windows collected in training");
  }

  MsMergeResult result;
  result.report.method = to_string(method);

  for (int n = 0; n < model.depth(); ++n) {
    const auto& layer = model.layers()[n];
    Matrix a_star = layer.adapter.a;
    double alpha_sum = 0.0;
    const int m_eff = effective_m(n, model.pre_num(), model.depth());
    if (method != MergeMethod::no) {
      for (int k = 1; k <= m_eff; ++k) {
        double alpha = 0.0;
        if (method == MergeMethod::bi) {
          if (windows->at(n).empty() || windows->at(n - k).empty()) {
            throw MergeError("merge_ms: empty norm window at layer " + std::to_string(n) +
                             "; train the model first");
          }
          const double denom = windows->at(n).mean();
          if (denom == 0.0) {
            throw MergeError("merge_ms: zero mean norm at layer " + std::to_string(n));
          }
          alpha = windows->at(n - k).mean() / denom;
        } else {  // bw: ratios of the A matrices' own norms
          const double denom = frobenius_norm(layer.adapter.a);
          if (denom == 0.0) {
            throw MergeError("merge_ms: zero Frobenius norm of A at layer " + std::to_string(n));
          }
          alpha = frobenius_norm(model.layers()[n - k].adapter.a) / denom;
        }
        add_scaled(a_star, alpha, model.layers()[n - k].adapter.a);
        alpha_sum += alpha;
      }
    }
    Matrix w_star = layer.base.w;
    add_scaled(w_star, layer.adapter.scale, matmul(layer.adapter.b, a_star));
    result.model.layers.push_back({std::move(w_star), layer.base.activation});
    result.merged_a.push_back(std::move(a_star));
    result.report.alpha_star.push_back(alpha_sum);
  }
  return result;
}

void fidelity_report(const ResLoraModel& pre_model, const MergedModel& merged,
                     const Matrix& eval_inputs, MergeReport& report) {
  const Matrix pre_out = forward(pre_model, eval_inputs).output();
  const Matrix merged_out = merged_forward(merged, eval_inputs);
  if (!pre_out.same_shape(merged_out)) {
    throw ShapeError("fidelity_report: output shape mismatch " + pre_out.shape_str() + " vs " +
                     merged_out.shape_str());
  }
  double mean = 0.0;
  double worst = 0.0;
  for (std::size_t j = 0; j < pre_out.cols(); ++j) {
    double col_max = 0.0;
    for (std::size_t i = 0; i < pre_out.rows(); ++i) {
      col_max = std::max(col_max, std::fabs(pre_out(i, j) - merged_out(i, j)));
    }
    mean += col_max;
    worst = std::max(worst, col_max);
  }
  report.mean_div = mean / static_cast<double>(pre_out.cols());
  report.max_div = worst;
}

void fidelity_report(const ResLoraModel& pre_model, const MergedModel& merged,
                     const Matrix& eval_inputs, const Matrix& eval_targets,
                     MergeReport& report) {
  fidelity_report(pre_model, merged, eval_inputs, report);
  const double pre_loss = mse_loss(forward(pre_model, eval_inputs).output(), eval_targets);
  const double merged_loss = mse_loss(merged_forward(merged, eval_inputs), eval_targets);
  if (pre_loss == 0.0) {
    report.loss_delta = (merged_loss == 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    report.loss_delta = (merged_loss - pre_loss) / pre_loss;
  }
}

}  // namespace reslora
