// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "reslora/checkpoint.hpp"

namespace reslora {

// Exit codes shared by the CLI: 0 success, 1 usage/config error,
// 2 numerical failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

/// Frozen base stack + freshly initialized adapters for one experiment.
ResLoraModel make_model_for_config(const ExperimentConfig& cfg,
                                   const std::vector<BaseLayer>& base);

TaskSetup make_task_for_config(const ExperimentConfig& cfg);

/// Deterministic held-out inputs for a task (stream 3 of the task seed).
Matrix eval_inputs_for_task(const SyntheticTask& task, int batch = 256);

/// Trains per the config file and writes checkpoint.json + loss.csv.
int cmd_train(const std::string& config_path, const std::string& out_override = "");

/// Merges a checkpoint (method: no|bi|bw|exact) and writes merged.json +
/// merge_report.json. Never touches the input checkpoint.
int cmd_merge(const std::string& checkpoint_path, const std::string& method,
              const std::string& out_dir);

/// Task loss of a checkpoint (training semantics) or a merged model; writes
/// metrics.json.
int cmd_eval(const std::string& checkpoint_path, const std::string& merged_path,
             std::optional<std::uint64_t> task_seed, const std::string& out_dir);

/// Backward vs central finite differences over every adapter coordinate.
/// Exit 0 iff the max relative error is below 1e-6. corrupt_gradient is a
/// test hook that perturbs one analytic gradient entry.
int cmd_gradcheck(const std::string& structure, int depth, int width, int rank,
                  std::uint64_t seed, int pre_num, bool corrupt_gradient = false);

/// Trains one run per pre_num value and writes ablate.csv (one loss column
/// per value) and fnorm_diff.csv (merged-adapter norm minus plain-LoRA
/// adapter norm per layer, reference run = last list entry).
int cmd_ablate(const std::string& config_path, const std::vector<int>& pre_num_list,
               const std::string& structure, const std::string& out_dir);

}  // namespace reslora
