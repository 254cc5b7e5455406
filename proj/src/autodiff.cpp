// SPDX-License-Identifier: Apache-2.0
#include "reslora/autodiff.hpp"

#include <cmath>

#include "reslora/train.hpp"

namespace reslora {

GradientSet GradientSet::zeros_like(const ResLoraModel& model) {
  GradientSet g;
  g.d_a.reserve(model.layers().size());
  g.d_b.reserve(model.layers().size());
  for (const auto& layer : model.layers()) {
    g.d_a.emplace_back(layer.adapter.a.rows(), layer.adapter.a.cols());
    g.d_b.emplace_back(layer.adapter.b.rows(), layer.adapter.b.cols());
  }
  return g;
}

namespace {

void check_trace(const ResLoraModel& model, const ForwardTrace& trace, const Matrix& dl_dout) {
  const auto depth = static_cast<std::size_t>(model.depth());
  if (trace.inputs.size() != depth || trace.adapter_mid.size() != depth ||
      trace.pre_act.size() != depth || trace.post_act.size() != depth) {
    throw std::invalid_argument("backward: trace depth does not match model depth " +
                                std::to_string(depth));
  }
  for (std::size_t n = 0; n < depth; ++n) {
    if (trace.inputs[n].rows() != model.layers()[n].base.w.cols() ||
        trace.pre_act[n].rows() != model.layers()[n].base.w.rows()) {
      throw std::invalid_argument("backward: trace shapes do not match model at layer " +
                                  std::to_string(n));
    }
  }
  if (!dl_dout.same_shape(trace.output())) {
    throw ShapeError("backward: dl_dout " + dl_dout.shape_str() + " does not match output " +
                     trace.output().shape_str());
  }
}

// dL/dh_n from dL/d(post_n), using the stored post-activation values.
Matrix through_activation(Activation act, const Matrix& d_post, const Matrix& post) {
  if (act == Activation::identity) return d_post;
  Matrix g = d_post;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = post.data()[i];
    g.data()[i] *= 1.0 - t * t;  // tanh'(h) = 1 - tanh(h)^2
  }
  return g;
}

}  // namespace

GradientSet backward(const ResLoraModel& model, const ForwardTrace& trace,
                     const Matrix& dl_dout) {
  check_trace(model, trace, dl_dout);
  const int depth = model.depth();
  GradientSet grads = GradientSet::zeros_like(model);

  // d_x[n] accumulates dL/dx_n; slot depth holds dL/d(final output).
  std::vector<Matrix> d_x;
  d_x.reserve(depth + 1);
  for (int n = 0; n < depth; ++n) {
    d_x.emplace_back(trace.inputs[n].rows(), trace.inputs[n].cols());
  }
  d_x.push_back(dl_dout);

  // The none path and the bs/ms paths at m_eff == 0 execute identical op
  // sequences per accumulator, keeping the LoRA degeneracy bitwise.
  for (int n = depth - 1; n >= 0; --n) {
    const auto& layer = model.layers()[n];
    const double s = layer.adapter.scale;
    const Matrix g = through_activation(layer.base.activation, d_x[n + 1], trace.post_act[n]);

    add_scaled(d_x[n], 1.0, matmul(transpose(layer.base.w), g));

    switch (model.structure()) {
      case Structure::none: {
        const Matrix t = matmul(transpose(layer.adapter.b), g);
        add_scaled(grads.d_a[n], s, matmul(t, transpose(trace.inputs[n])));
        add_scaled(grads.d_b[n], s, matmul(g, transpose(trace.adapter_mid[n])));
        add_scaled(d_x[n], s, matmul(transpose(layer.adapter.a), t));
        break;
      }
      case Structure::input_shortcut: {
        const Matrix& xn = trace.inputs[n];
        const Matrix u = (n == 0) ? xn + xn : xn + trace.inputs[n - 1];
        const Matrix t = matmul(transpose(layer.adapter.b), g);
        add_scaled(grads.d_a[n], s, matmul(t, transpose(u)));
        add_scaled(grads.d_b[n], s, matmul(g, transpose(trace.adapter_mid[n])));
        const Matrix v = matmul(transpose(layer.adapter.a), t);
        add_scaled(d_x[n], s, v);
        add_scaled(d_x[n == 0 ? 0 : n - 1], s, v);  // x_{-1} := x_0 doubles layer 0
        break;
      }
      case Structure::block_shortcut: {
        const int m_eff = effective_m(n, model.pre_num(), depth);
        for (int k = 0; k <= m_eff; ++k) {
          const auto& prev = model.layers()[n - k].adapter;
          const Matrix ax =
              (k == 0) ? trace.adapter_mid[n] : matmul(prev.a, trace.inputs[n]);
          const Matrix t = matmul(transpose(prev.b), g);
          add_scaled(grads.d_a[n - k], s, matmul(t, transpose(trace.inputs[n])));
          add_scaled(grads.d_b[n - k], s, matmul(g, transpose(ax)));
          add_scaled(d_x[n], s, matmul(transpose(prev.a), t));
        }
        break;
      }
      case Structure::middle_shortcut: {
        const int m_eff = effective_m(n, model.pre_num(), depth);
        Matrix z = trace.adapter_mid[n];
        for (int k = 1; k <= m_eff; ++k) {
          z = z + trace.adapter_mid[n - k];
        }
        const Matrix t = matmul(transpose(layer.adapter.b), g);
        add_scaled(grads.d_a[n], s, matmul(t, transpose(trace.inputs[n])));
        add_scaled(grads.d_b[n], s, matmul(g, transpose(z)));
        add_scaled(d_x[n], s, matmul(transpose(layer.adapter.a), t));
        for (int k = 1; k <= m_eff; ++k) {
          const auto& prev = model.layers()[n - k].adapter;
          add_scaled(grads.d_a[n - k], s, matmul(t, transpose(trace.inputs[n - k])));
          add_scaled(d_x[n - k], s, matmul(transpose(prev.a), t));
        }
        break;
      }
    }
  }
  return grads;
}

double finite_diff_grad(const ResLoraModel& model, const LossFn& loss_fn,
                        const ParamCoord& which, double step) {
  if (step <= 0.0) {
    throw std::invalid_argument("finite_diff_grad: step must be positive");
  }
  if (which.matrix == ParamMatrix::w) {
    throw std::invalid_argument("finite_diff_grad: W is frozen, not a trainable coordinate");
  }
  if (which.layer < 0 || which.layer >= model.depth()) {
    throw std::out_of_range("finite_diff_grad: layer " + std::to_string(which.layer) +
                            " out of range");
  }
  auto probe = [&](double delta) {
    ResLoraModel copy = model;
    auto& adapter = copy.layers()[which.layer].adapter;
    Matrix& target = (which.matrix == ParamMatrix::a) ? adapter.a : adapter.b;
    if (which.row >= target.rows() || which.col >= target.cols()) {
      throw std::out_of_range("finite_diff_grad: coordinate (" + std::to_string(which.row) +
                              "," + std::to_string(which.col) + ") out of range for " +
                              target.shape_str());
    }
    target(which.row, which.col) += delta;
    return loss_fn(copy);
  };
  return (probe(step) - probe(-step)) / (2.0 * step);
}

std::vector<double> grad_path_norms(const ResLoraModel& model, const Matrix& inputs,
                                    const Matrix& targets) {
  const ForwardTrace trace = forward(model, inputs);
  const GradientSet grads = backward(model, trace, mse_loss_grad(trace.output(), targets));
  std::vector<double> norms;
  norms.reserve(grads.d_b.size());
  for (const auto& db : grads.d_b) {
    norms.push_back(frobenius_norm(db));
  }
  return norms;
}

}  // namespace reslora
