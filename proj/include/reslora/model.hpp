// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "reslora/matrix.hpp"

namespace reslora {

/// Elementwise nonlinearity applied to every layer output.
enum class Activation { identity, tanh };

/// Residual wiring of the adapter stack during training.
///   none            plain LoRA, each block sees only its own layer input
///   input_shortcut  block n projects x_n + x_{n-1}            ("is")
///   block_shortcut  previous blocks' B*A products reapplied to x_n   ("bs")
///   middle_shortcut previous blocks' A*x intermediates summed into B_n ("ms")
enum class Structure { none, input_shortcut, block_shortcut, middle_shortcut };

std::string to_string(Activation a);
std::string to_string(Structure s);
Activation activation_from_string(const std::string& s);
Structure structure_from_string(const std::string& s);

/// One low-rank adapter: contribution is scale * B * A * (input term).
/// A is rank x d_in, B is d_out x rank. A fresh block has B == 0 so the model
/// starts exactly at the frozen base function.
struct AdapterBlock {
  Matrix a;
  Matrix b;
  int rank = 0;
  double scale = 1.0;  // alpha / rank
};

/// Frozen linear layer. W never receives gradient updates.
struct BaseLayer {
  Matrix w;
  Activation activation = Activation::identity;
};

struct Layer {
  BaseLayer base;
  AdapterBlock adapter;
};

/// A ~ N(0, 0.02), B = 0.
AdapterBlock make_adapter(SeededRng& rng, std::size_t d_out, std::size_t d_in, int rank,
                          double alpha);

/// Everything the backward pass and the norm collector need from one forward
/// call. Columns of every matrix are batch examples.
struct ForwardTrace {
  std::vector<Matrix> inputs;       // x_n, the input each layer saw
  std::vector<Matrix> adapter_mid;  // A_n x_n; for input_shortcut, A_n (x_n + x_{n-1})
  std::vector<Matrix> pre_act;      // h_n
  std::vector<Matrix> post_act;     // activation(h_n)

  const Matrix& output() const { return post_act.back(); }
};

/// Clamped number of previous blocks layer n actually uses. m == -1 means
/// "all previous"; otherwise the count is capped at n so no shortcut ever
/// reads a negative layer index.
int effective_m(int n, int m, int depth);

/// Ordered stack of frozen layers with one adapter each, plus the residual
/// structure tag and the pre_num hyperparameter. Construction validates all
/// shape invariants, including the shortcut shape gating for bs/ms.
class ResLoraModel {
 public:
  ResLoraModel(std::vector<Layer> layers, Structure structure, int pre_num);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  Structure structure() const { return structure_; }
  int pre_num() const { return pre_num_; }
  int depth() const { return static_cast<int>(layers_.size()); }
  std::size_t input_dim() const { return layers_.front().base.w.cols(); }
  std::size_t output_dim() const { return layers_.back().base.w.rows(); }

 private:
  void validate() const;

  std::vector<Layer> layers_;
  Structure structure_;
  int pre_num_;
};

/// Dispatches on the model's structure tag.
ForwardTrace forward(const ResLoraModel& model, const Matrix& x);

/// h_n = W_n x_n + s B_n A_n x_n. Usable on any model (ignores shortcuts).
ForwardTrace forward_plain(const ResLoraModel& model, const Matrix& x);

/// h_n = W_n x_n + s B_n A_n (x_n + x_{n-1}); the first layer uses
/// x_{-1} := x_0, doubling its adapter input.
ForwardTrace forward_is(const ResLoraModel& model, const Matrix& x);

/// h_n = W_n x_n + s * sum_{k=0..m_eff} B_{n-k} A_{n-k} x_n.
ForwardTrace forward_bs(const ResLoraModel& model, const Matrix& x);

/// h_n = W_n x_n + s B_n * sum_{k=0..m_eff} A_{n-k} x_{n-k}.
ForwardTrace forward_ms(const ResLoraModel& model, const Matrix& x);

/// Forward through frozen layers only (no adapters). Also evaluates merged
/// models and synthetic-task teachers.
Matrix base_forward(const std::vector<BaseLayer>& stack, const Matrix& x);

Matrix apply_activation(Activation act, const Matrix& m);

}  // namespace reslora
