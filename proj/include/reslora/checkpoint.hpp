// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reslora/merge.hpp"
#include "reslora/model.hpp"
#include "reslora/train.hpp"

namespace reslora {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One experiment, fully determined. Defaults follow the usual adapter
/// hyperparameters (rank 4, alpha 8, pre_num 4).
struct ExperimentConfig {
  Structure structure = Structure::none;
  int depth = 4;
  int width = 8;
  int rank = 4;
  double alpha = 8.0;
  int pre_num = 4;
  Activation activation = Activation::tanh;
  double base_gain = 0.3;
  int steps = 300;
  int batch_size = 16;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 1;
  std::uint64_t task_seed = 7;
  double task_shift = 0.1;
  int window_capacity = 64;
  std::string out_dir = "out";
};

/// Missing fields fall back to defaults; present fields are type- and
/// range-checked with the offending field named; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

/// On-disk training state: config echo, per-layer W/A/B, and the norm
/// windows the input-based merge consumes at inference time.
struct Checkpoint {
  int format_version = 1;
  ExperimentConfig config;
  Structure structure = Structure::none;
  std::vector<Matrix> w, a, b;                      // per layer
  std::vector<std::vector<double>> norm_windows;    // per layer, oldest first
};

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const ResLoraModel& model,
                           const std::vector<NormWindow>& windows);
ResLoraModel model_from_checkpoint(const Checkpoint& ckpt);
std::vector<NormWindow> windows_from_checkpoint(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_merged(const MergedModel& merged, const ExperimentConfig& cfg,
                 const std::string& path);
std::pair<MergedModel, ExperimentConfig> load_merged(const std::string& path);

void save_merge_report(const MergeReport& report, const std::string& path);

/// Shortest round-trip decimal formatting (std::to_chars); used for all CSV
/// output so identical runs produce identical bytes.
std::string format_double(double value);

/// Write-temp-then-rename.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

}  // namespace reslora
