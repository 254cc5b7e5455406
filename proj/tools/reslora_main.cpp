// SPDX-License-Identifier: Apache-2.0
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reslora/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"low-rank adapters with residual shortcuts: train, merge, evaluate"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  auto* train = app.add_subcommand("train", "train adapters on a synthetic task");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--out", out_dir, "output directory (overrides config out_dir)");

  std::string checkpoint_path;
  std::string method = "exact";
  std::string merge_out = ".";
  auto* merge = app.add_subcommand("merge", "fold shortcuts into plain weights");
  merge->add_option("--checkpoint", checkpoint_path, "trained checkpoint.json")->required();
  merge->add_option("--method", method, "no|bi|bw|exact");
  merge->add_option("--out", merge_out, "output directory");

  std::string eval_checkpoint;
  std::string eval_merged;
  std::string eval_out = ".";
  std::optional<std::uint64_t> task_seed;
  auto* eval = app.add_subcommand("eval", "task loss of a checkpoint or merged model");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint.json to evaluate");
  eval->add_option("--merged", eval_merged, "merged.json to evaluate");
  eval->add_option("--task-seed", task_seed, "override the task seed");
  eval->add_option("--out", eval_out, "output directory");

  std::string gc_structure = "none";
  int gc_depth = 4;
  int gc_width = 6;
  int gc_rank = 2;
  std::uint64_t gc_seed = 1;
  int gc_pre_num = 1;
  bool gc_corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "backward vs finite differences");
  gradcheck->add_option("--structure", gc_structure, "none|is|bs|ms");
  gradcheck->add_option("--depth", gc_depth, "number of layers");
  gradcheck->add_option("--width", gc_width, "layer width");
  gradcheck->add_option("--rank", gc_rank, "adapter rank");
  gradcheck->add_option("--seed", gc_seed, "rng seed");
  gradcheck->add_option("--pre-num", gc_pre_num, "previous blocks to use");
  gradcheck->add_flag("--corrupt-gradient", gc_corrupt,
                      "test hook: perturb one analytic gradient entry");

  std::string ab_config;
  std::string ab_structure = "bs";
  std::string ab_out;
  std::vector<int> pre_num_list;
  auto* ablate = app.add_subcommand("ablate", "loss curves across pre_num values");
  ablate->add_option("--config", ab_config, "experiment config JSON")->required();
  ablate->add_option("--pre-num-list", pre_num_list, "comma-separated pre_num values")
      ->required()
      ->delimiter(',');
  ablate->add_option("--structure", ab_structure, "bs|ms|is");
  ablate->add_option("--out", ab_out, "output directory (overrides config out_dir)");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) return reslora::cmd_train(config_path, out_dir);
  if (merge->parsed()) return reslora::cmd_merge(checkpoint_path, method, merge_out);
  if (eval->parsed()) return reslora::cmd_eval(eval_checkpoint, eval_merged, task_seed, eval_out);
  if (gradcheck->parsed()) {
    return reslora::cmd_gradcheck(gc_structure, gc_depth, gc_width, gc_rank, gc_seed,
                                  gc_pre_num, gc_corrupt);
  }
  if (ablate->parsed()) return reslora::cmd_ablate(ab_config, pre_num_list, ab_structure, ab_out);
  return reslora::kExitUsage;
}
