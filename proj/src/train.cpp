// SPDX-License-Identifier: Apache-2.0
#include "reslora/train.hpp"

#include <cmath>

#include "reslora/autodiff.hpp"

namespace reslora {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd|adam)");
}

TaskSetup make_task(std::uint64_t seed, int depth, int width, double shift,
                    Activation activation, double base_gain) {
  if (depth < 1 || width < 1) {
    throw std::invalid_argument("make_task: depth and width must be >= 1");
  }
  if (!(base_gain > 0.0)) {
    throw std::invalid_argument("make_task: base_gain must be positive");
  }
  SeededRng base_rng(mix_seed(seed, 0));
  SeededRng shift_rng(mix_seed(seed, 1));
  const auto d = static_cast<std::size_t>(width);

  TaskSetup setup;
  setup.task.seed = seed;
  setup.task.shift = shift;
  // Base layers are near-identity maps, W = I + gain * G / sqrt(d), so the
  // random part mixes roughly `gain` of the signal per layer. Consecutive
  // layer inputs stay strongly aligned (the regime the shortcut merges
  // assume) and keep healthy magnitudes at any depth, while tanh curvature
  // still attenuates gradients through deep stacks.
  const double noise_std = base_gain / std::sqrt(static_cast<double>(width));
  for (int n = 0; n < depth; ++n) {
    Matrix w = gaussian_fill(base_rng, d, d, noise_std);
    for (std::size_t i = 0; i < d; ++i) w(i, i) += 1.0;
    BaseLayer layer{std::move(w), activation};
    BaseLayer teacher_layer = layer;
    if (shift > 0.0) {
      add_scaled(teacher_layer.w, 1.0, gaussian_fill(shift_rng, d, d, shift));
    }
    setup.base.push_back(std::move(layer));
    setup.task.teacher.push_back(std::move(teacher_layer));
  }
  return setup;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse_loss: shape mismatch " + pred.shape_str() + " vs " +
                     target.shape_str());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

Matrix mse_loss_grad(const Matrix& pred, const Matrix& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse_loss_grad: shape mismatch " + pred.shape_str() + " vs " +
                     target.shape_str());
  }
  Matrix g = pred;
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data()[i] = scale * (pred.data()[i] - target.data()[i]);
  }
  return g;
}

void collect_norm_samples(const ResLoraModel& model, const ForwardTrace& trace,
                          std::vector<NormWindow>& windows) {
  if (windows.size() != static_cast<std::size_t>(model.depth())) {
    throw std::invalid_argument("collect_norm_samples: expected one window per layer");
  }
  for (int n = 0; n < model.depth(); ++n) {
    // ms merges consume A_n x_n norms; everything else windows the layer input.
    const Matrix& quantity = (model.structure() == Structure::middle_shortcut)
                                 ? trace.adapter_mid[n]
                                 : trace.inputs[n];
    windows[n].push(mean_column_norm(quantity));
  }
}

void sgd_step(Matrix& param, const Matrix& grad, double lr) {
  if (!param.same_shape(grad)) {
    throw ShapeError("sgd_step: shape mismatch " + param.shape_str() + " vs " +
                     grad.shape_str());
  }
  add_scaled(param, -lr, grad);
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, long t, double lr,
               double beta1, double beta2, double eps) {
  if (!param.same_shape(grad)) {
    throw ShapeError("adam_step: shape mismatch " + param.shape_str() + " vs " +
                     grad.shape_str());
  }
  if (t < 1) throw std::invalid_argument("adam_step: t starts at 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data()[i];
    double& m = state.m.data()[i];
    double& v = state.v.data()[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    param.data()[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

TrainResult train(ResLoraModel model, const SyntheticTask& task, const TrainConfig& cfg) {
  if (cfg.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (model.input_dim() != task.input_dim()) {
    throw ShapeError("train: model input dim " + std::to_string(model.input_dim()) +
                     " does not match task input dim " + std::to_string(task.input_dim()));
  }

  SeededRng batch_rng(mix_seed(cfg.seed, 2));
  const int depth = model.depth();

  std::vector<NormWindow> windows(static_cast<std::size_t>(depth),
                                  NormWindow(static_cast<std::size_t>(cfg.window_capacity)));
  std::vector<AdamState> adam_a, adam_b;
  if (cfg.optimizer == OptimizerKind::adam) {
    for (const auto& layer : model.layers()) {
      adam_a.push_back({Matrix(layer.adapter.a.rows(), layer.adapter.a.cols()),
                        Matrix(layer.adapter.a.rows(), layer.adapter.a.cols())});
      adam_b.push_back({Matrix(layer.adapter.b.rows(), layer.adapter.b.cols()),
                        Matrix(layer.adapter.b.rows(), layer.adapter.b.cols())});
    }
  }

  std::vector<LossPoint> curve;
  curve.reserve(cfg.steps);

  for (int step = 0; step < cfg.steps; ++step) {
    const Matrix x = task.sample_inputs(batch_rng, cfg.batch_size);
    const Matrix y = task.target(x);
    const ForwardTrace trace = forward(model, x);
    const double loss = mse_loss(trace.output(), y);
    if (!std::isfinite(loss)) {
      throw DivergenceError("train: loss became non-finite at step " + std::to_string(step));
    }
    curve.push_back({step, loss});
    collect_norm_samples(model, trace, windows);

    const GradientSet grads = backward(model, trace, mse_loss_grad(trace.output(), y));
    for (int n = 0; n < depth; ++n) {
      auto& adapter = model.layers()[n].adapter;
      if (cfg.optimizer == OptimizerKind::sgd) {
        sgd_step(adapter.a, grads.d_a[n], cfg.learning_rate);
        sgd_step(adapter.b, grads.d_b[n], cfg.learning_rate);
      } else {
        adam_step(adapter.a, grads.d_a[n], adam_a[n], step + 1, cfg.learning_rate);
        adam_step(adapter.b, grads.d_b[n], adam_b[n], step + 1, cfg.learning_rate);
      }
    }
  }

  return TrainResult{std::move(model), std::move(curve), std::move(windows)};
}

}  // namespace reslora
