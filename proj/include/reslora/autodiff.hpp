// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "reslora/model.hpp"

namespace reslora {

/// Exact loss gradients for every adapter parameter. Frozen base weights W
/// deliberately have no slot here.
struct GradientSet {
  std::vector<Matrix> d_a;
  std::vector<Matrix> d_b;

  static GradientSet zeros_like(const ResLoraModel& model);
};

/// Reverse-mode gradients through the structure the model was built with.
/// `trace` must come from forward() on this model; `dl_dout` is the loss
/// gradient w.r.t. the final post-activation output. Cross-layer shortcut
/// paths are accumulated by summation, so a block used by layers n..n+m
/// receives every path contribution.
GradientSet backward(const ResLoraModel& model, const ForwardTrace& trace,
                     const Matrix& dl_dout);

enum class ParamMatrix { a, b, w };

/// Names one scalar parameter coordinate of the model.
struct ParamCoord {
  int layer = 0;
  ParamMatrix matrix = ParamMatrix::a;
  std::size_t row = 0;
  std::size_t col = 0;
};

using LossFn = std::function<double(const ResLoraModel&)>;

/// Central difference (L(theta+h) - L(theta-h)) / 2h at one coordinate.
/// Refuses coordinates of the frozen W.
double finite_diff_grad(const ResLoraModel& model, const LossFn& loss_fn,
                        const ParamCoord& which, double step = 1e-5);

/// Frobenius norm of dL/dB_n per layer under the MSE loss on (inputs,
/// targets). Diagnostic for comparing gradient flow across structures.
std::vector<double> grad_path_norms(const ResLoraModel& model, const Matrix& inputs,
                                    const Matrix& targets);

}  // namespace reslora
