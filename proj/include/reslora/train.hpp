// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <utility>
#include <vector>

#include "reslora/model.hpp"

namespace reslora {

/// Training aborted because the loss became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sliding FIFO window of the most recent Frobenius norms of one layer's
/// merge-relevant quantity (x_n for the input shortcut, A_n x_n for the
/// middle shortcut). Feeds the input-based merge.
class NormWindow {
 public:
  explicit NormWindow(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("NormWindow: capacity must be positive");
  }

  void push(double value) {
    values_.push_back(value);
    if (values_.size() > capacity_) values_.pop_front();
  }

  std::size_t size() const { return values_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return values_.empty(); }
  const std::deque<double>& values() const { return values_; }

  double mean() const {
    if (values_.empty()) {
      throw std::runtime_error("NormWindow: empty window (train the model first)");
    }
    double sum = 0.0;
    for (double v : values_) sum += v;
    return sum / static_cast<double>(values_.size());
  }

 private:
  std::size_t capacity_;
  std::deque<double> values_;
};

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  int steps = 300;
  int batch_size = 16;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 1;
  int window_capacity = 64;
};

/// Teacher-student regression target: the teacher is the student's frozen
/// base stack with every W additively perturbed, so the residual the
/// adapters must learn genuinely has low-rank-friendly structure. Inputs are
/// standard normal.
struct SyntheticTask {
  std::vector<BaseLayer> teacher;
  std::uint64_t seed = 0;
  double shift = 0.0;

  std::size_t input_dim() const { return teacher.front().w.cols(); }
  Matrix target(const Matrix& x) const { return base_forward(teacher, x); }
  Matrix sample_inputs(SeededRng& rng, int batch) const {
    return gaussian_fill(rng, input_dim(), static_cast<std::size_t>(batch), 1.0);
  }
};

struct TaskSetup {
  std::vector<BaseLayer> base;  // the student's frozen stack
  SyntheticTask task;
};

/// Deterministic per seed. W entries are N(0, base_gain^2); the teacher adds
/// N(0, shift^2) noise on top of each W. shift == 0 makes the initial loss
/// exactly zero.
TaskSetup make_task(std::uint64_t seed, int depth, int width, double shift,
                    Activation activation, double base_gain);

/// Mean over all entries of the squared difference.
double mse_loss(const Matrix& pred, const Matrix& target);
Matrix mse_loss_grad(const Matrix& pred, const Matrix& target);

struct LossPoint {
  int step;
  double loss;
};

struct TrainResult {
  ResLoraModel model;
  std::vector<LossPoint> curve;       // loss at each step, before that step's update
  std::vector<NormWindow> windows;    // one per layer
};

/// Runs cfg.steps optimizer updates on the adapter parameters only. After
/// each forward, pushes the per-layer mean per-example norm of the
/// merge-relevant quantity into that layer's window. Throws DivergenceError
/// naming the step if the loss goes non-finite.
TrainResult train(ResLoraModel model, const SyntheticTask& task, const TrainConfig& cfg);

/// One norm sample per layer from a forward trace (exposed so merges can be
/// exercised without a full training run).
void collect_norm_samples(const ResLoraModel& model, const ForwardTrace& trace,
                          std::vector<NormWindow>& windows);

void sgd_step(Matrix& param, const Matrix& grad, double lr);

struct AdamState {
  Matrix m;
  Matrix v;
};

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, long t, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace reslora
