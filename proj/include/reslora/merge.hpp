// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "reslora/model.hpp"
#include "reslora/train.hpp"

namespace reslora {

class MergeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain linear stack with the adapters folded into each W. Evaluates
/// layer-by-layer with no reference to other layers; run it with
/// merged_forward / base_forward.
struct MergedModel {
  std::vector<BaseLayer> layers;
};

Matrix merged_forward(const MergedModel& model, const Matrix& x);

/// How shortcut terms are folded into the current layer's weights.
///   exact  algebraic fold, block-shortcut only
///   no     drop shortcut terms (alpha* = 0)
///   bi     alpha* from sliding-window norms collected in training
///   bw     alpha* from Frobenius norms of already-merged weights (is) or of
///          the A matrices (ms)
enum class MergeMethod { exact, no, bi, bw };

std::string to_string(MergeMethod m);
MergeMethod merge_method_from_string(const std::string& s);

struct MergeReport {
  std::string method;              // exact_bs | no | bi | bw
  std::vector<double> alpha_star;  // one per layer
  double mean_div = 0.0;
  double max_div = 0.0;
  double loss_delta = 0.0;  // (merged task loss - pre-merge task loss) / pre-merge
};

/// alpha* for the input-based merge at layer n: ratio of the mean window
/// norms of layers n-1 and n.
double alpha_bi(const std::vector<NormWindow>& windows, std::size_t n);

/// alpha* for the weight-based merge at layer n, consuming the already-merged
/// weights of earlier layers. Layer 1 has no W*_{n-2}; it uses the neutral 1.
double alpha_bw(const std::vector<Matrix>& merged_prefix, std::size_t n);

/// Exact block-shortcut fold: W*_n = W_n + s * sum_k B_{n-k} A_{n-k}.
std::pair<MergedModel, MergeReport> merge_bs(const ResLoraModel& model);

/// Input-shortcut fold: W*_n = W_n + (1 + alpha*_n) s B_n A_n. Layer 0 is
/// exact (factor 2, from x_{-1} := x_0). windows required iff method == bi.
std::pair<MergedModel, MergeReport> merge_is(const ResLoraModel& model, MergeMethod method,
                                             const std::vector<NormWindow>* windows = nullptr);

struct MsMergeResult {
  MergedModel model;
  std::vector<Matrix> merged_a;  // A*_n = A_n + sum_k alpha*_{n-k} A_{n-k}
  MergeReport report;
};

/// Middle-shortcut fold through merged A matrices: W*_n = W_n + s B_n A*_n.
MsMergeResult merge_ms(const ResLoraModel& model, MergeMethod method,
                       const std::vector<NormWindow>* windows = nullptr);

/// Fills mean/max output divergence between the training-semantics model and
/// its merged counterpart over the columns of eval_inputs.
void fidelity_report(const ResLoraModel& pre_model, const MergedModel& merged,
                     const Matrix& eval_inputs, MergeReport& report);

/// Same, plus the relative task-loss delta against eval_targets.
void fidelity_report(const ResLoraModel& pre_model, const MergedModel& merged,
                     const Matrix& eval_inputs, const Matrix& eval_targets,
                     MergeReport& report);

}  // namespace reslora
