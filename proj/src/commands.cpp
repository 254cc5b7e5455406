// SPDX-License-Identifier: Apache-2.0
#include "reslora/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>

#include <nlohmann/json.hpp>

#include "reslora/autodiff.hpp"

namespace fs = std::filesystem;

namespace reslora {

namespace {

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string loss_csv(const std::vector<LossPoint>& curve) {
  std::string out = "step,loss\n";
  for (const auto& point : curve) {
    out += std::to_string(point.step);
    out += ',';
    out += format_double(point.loss);
    out += '\n';
  }
  return out;
}

// Exact fold for a plain-LoRA checkpoint: W* = W + s B A per layer.
std::pair<MergedModel, MergeReport> merge_plain(const ResLoraModel& model) {
  MergedModel merged;
  MergeReport report;
  report.method = "exact_bs";
  for (const auto& layer : model.layers()) {
    Matrix w_star = layer.base.w;
    add_scaled(w_star, layer.adapter.scale, matmul(layer.adapter.b, layer.adapter.a));
    merged.layers.push_back({std::move(w_star), layer.base.activation});
    report.alpha_star.push_back(1.0);
  }
  return {std::move(merged), std::move(report)};
}

// Per-layer W* - W under the structure's natural merge (exact for bs/none,
// input-based for is/ms).
std::vector<Matrix> merged_weight_deltas(const ResLoraModel& model,
                                         const std::vector<NormWindow>& windows) {
  MergedModel merged;
  switch (model.structure()) {
    case Structure::none: merged = merge_plain(model).first; break;
    case Structure::block_shortcut: merged = merge_bs(model).first; break;
    case Structure::input_shortcut: merged = merge_is(model, MergeMethod::bi, &windows).first; break;
    case Structure::middle_shortcut: merged = merge_ms(model, MergeMethod::bi, &windows).model; break;
  }
  std::vector<Matrix> deltas;
  for (int n = 0; n < model.depth(); ++n) {
    deltas.push_back(merged.layers[n].w - model.layers()[n].base.w);
  }
  return deltas;
}

}  // namespace

ResLoraModel make_model_for_config(const ExperimentConfig& cfg,
                                   const std::vector<BaseLayer>& base) {
  SeededRng init_rng(mix_seed(cfg.seed, 0));
  std::vector<Layer> layers;
  layers.reserve(base.size());
  for (const auto& bl : base) {
    Layer layer;
    layer.base = bl;
    layer.adapter = make_adapter(init_rng, bl.w.rows(), bl.w.cols(), cfg.rank, cfg.alpha);
    layers.push_back(std::move(layer));
  }
  return ResLoraModel(std::move(layers), cfg.structure, cfg.pre_num);
}

TaskSetup make_task_for_config(const ExperimentConfig& cfg) {
  return make_task(cfg.task_seed, cfg.depth, cfg.width, cfg.task_shift, cfg.activation,
                   cfg.base_gain);
}

Matrix eval_inputs_for_task(const SyntheticTask& task, int batch) {
  SeededRng rng(mix_seed(task.seed, 3));
  return task.sample_inputs(rng, batch);
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
  return guarded([&] {
    const ExperimentConfig cfg = load_config(config_path);
    // The override picks where files land but stays out of the checkpoint's
    // config echo, so identical configs give identical bytes anywhere.
    const std::string out_dir = out_override.empty() ? cfg.out_dir : out_override;

    const TaskSetup setup = make_task_for_config(cfg);
    ResLoraModel model = make_model_for_config(cfg, setup.base);

    TrainConfig tc{cfg.steps, cfg.batch_size, cfg.learning_rate,
                   cfg.optimizer, cfg.seed,   cfg.window_capacity};
    TrainResult result = train(std::move(model), setup.task, tc);

    write_text_atomic(join_path(out_dir, "loss.csv"), loss_csv(result.curve));
    save_checkpoint(make_checkpoint(cfg, result.model, result.windows),
                    join_path(out_dir, "checkpoint.json"));

    std::cout << "trained " << to_string(cfg.structure) << " depth=" << cfg.depth
              << " steps=" << cfg.steps << ": loss " << format_double(result.curve.front().loss)
              << " -> " << format_double(result.curve.back().loss) << "\n"
              << "wrote " << join_path(out_dir, "checkpoint.json") << ", "
              << join_path(out_dir, "loss.csv") << "\n";
    return kExitOk;
  });
}

int cmd_merge(const std::string& checkpoint_path, const std::string& method_str,
              const std::string& out_dir) {
  return guarded([&] {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const ResLoraModel model = model_from_checkpoint(ckpt);
    const std::vector<NormWindow> windows = windows_from_checkpoint(ckpt);
    const MergeMethod method = merge_method_from_string(method_str);

    MergedModel merged;
    MergeReport report;
    switch (model.structure()) {
      case Structure::none:
      case Structure::block_shortcut: {
        if (method != MergeMethod::exact) {
          throw std::invalid_argument("cmd_merge: structure " + to_string(model.structure()) +
                                      " merges exactly; use --method exact");
        }
        auto [m, r] = (model.structure() == Structure::block_shortcut) ? merge_bs(model)
                                                                       : merge_plain(model);
        merged = std::move(m);
        report = std::move(r);
        break;
      }
      case Structure::input_shortcut: {
        auto [m, r] = merge_is(model, method, &windows);
        merged = std::move(m);
        report = std::move(r);
        break;
      }
      case Structure::middle_shortcut: {
        auto result = merge_ms(model, method, &windows);
        merged = std::move(result.model);
        report = std::move(result.report);
        break;
      }
    }

    const TaskSetup setup = make_task_for_config(ckpt.config);
    const Matrix eval_x = eval_inputs_for_task(setup.task);
    fidelity_report(model, merged, eval_x, setup.task.target(eval_x), report);

    save_merged(merged, ckpt.config, join_path(out_dir, "merged.json"));
    save_merge_report(report, join_path(out_dir, "merge_report.json"));
    std::cout << "merged " << to_string(model.structure()) << " with method " << report.method
              << ": mean_div " << format_double(report.mean_div) << ", max_div "
              << format_double(report.max_div) << ", loss_delta "
              << format_double(report.loss_delta) << "\n"
              << "wrote " << join_path(out_dir, "merged.json") << ", "
              << join_path(out_dir, "merge_report.json") << "\n";
    return kExitOk;
  });
}

int cmd_eval(const std::string& checkpoint_path, const std::string& merged_path,
             std::optional<std::uint64_t> task_seed, const std::string& out_dir) {
  return guarded([&] {
    if (checkpoint_path.empty() == merged_path.empty()) {
      throw std::invalid_argument("cmd_eval: pass exactly one of --checkpoint or --merged");
    }

    ExperimentConfig cfg;
    Matrix output(1, 1);
    double loss = 0.0;
    if (!checkpoint_path.empty()) {
      const Checkpoint ckpt = load_checkpoint(checkpoint_path);
      cfg = ckpt.config;
      if (task_seed) cfg.task_seed = *task_seed;
      const TaskSetup setup = make_task_for_config(cfg);
      const Matrix eval_x = eval_inputs_for_task(setup.task);
      const ResLoraModel model = model_from_checkpoint(ckpt);
      loss = mse_loss(forward(model, eval_x).output(), setup.task.target(eval_x));
    } else {
      auto [merged, merged_cfg] = load_merged(merged_path);
      cfg = merged_cfg;
      if (task_seed) cfg.task_seed = *task_seed;
      const TaskSetup setup = make_task_for_config(cfg);
      const Matrix eval_x = eval_inputs_for_task(setup.task);
      loss = mse_loss(merged_forward(merged, eval_x), setup.task.target(eval_x));
    }

    const nlohmann::json j{{"task_loss", loss}, {"task_seed", cfg.task_seed},
                           {"eval_batch_size", 256}};
    write_text_atomic(join_path(out_dir, "metrics.json"), j.dump(2) + "\n");
    std::cout << "task_loss " << format_double(loss) << "\n"
              << "wrote " << join_path(out_dir, "metrics.json") << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const std::string& structure_str, int depth, int width, int rank,
                  std::uint64_t seed, int pre_num, bool corrupt_gradient) {
  return guarded([&]() -> int {
    const Structure structure = structure_from_string(structure_str);
    if (depth < 1 || width < 1 || rank < 1 || rank > width) {
      throw std::invalid_argument("cmd_gradcheck: need depth >= 1 and 1 <= rank <= width");
    }

    SeededRng rng(mix_seed(seed, 4));
    const auto d = static_cast<std::size_t>(width);
    std::vector<Layer> layers;
    for (int n = 0; n < depth; ++n) {
      Layer layer;
      layer.base = BaseLayer{gaussian_fill(rng, d, d, 0.5), Activation::tanh};
      layer.adapter.rank = rank;
      layer.adapter.scale = 2.0;
      layer.adapter.a = gaussian_fill(rng, static_cast<std::size_t>(rank), d, 0.2);
      layer.adapter.b = gaussian_fill(rng, d, static_cast<std::size_t>(rank), 0.2);
      layers.push_back(std::move(layer));
    }
    const ResLoraModel model(std::move(layers), structure, pre_num);
    const Matrix x = gaussian_fill(rng, d, 3, 1.0);
    const Matrix target = gaussian_fill(rng, d, 3, 1.0);

    const ForwardTrace trace = forward(model, x);
    GradientSet grads = backward(model, trace, mse_loss_grad(trace.output(), target));
    if (corrupt_gradient) {
      grads.d_b[0].data()[0] += 1e-3;
    }

    const LossFn loss_fn = [&](const ResLoraModel& m) {
      return mse_loss(forward(m, x).output(), target);
    };

    double max_rel = 0.0;
    std::size_t checked = 0;
    for (int n = 0; n < model.depth(); ++n) {
      for (ParamMatrix which : {ParamMatrix::a, ParamMatrix::b}) {
        const Matrix& analytic = (which == ParamMatrix::a) ? grads.d_a[n] : grads.d_b[n];
        for (std::size_t r = 0; r < analytic.rows(); ++r) {
          for (std::size_t c = 0; c < analytic.cols(); ++c) {
            const double numeric = finite_diff_grad(model, loss_fn, {n, which, r, c});
            const double ga = analytic(r, c);
            if (std::fabs(ga) < 1e-8 && std::fabs(numeric) < 1e-8) continue;
            // Denominator floored at 1 so coordinates near the central
            // difference noise floor are judged on absolute error.
            const double rel =
                std::fabs(ga - numeric) / std::max({1.0, std::fabs(ga), std::fabs(numeric)});
            max_rel = std::max(max_rel, rel);
            ++checked;
          }
        }
      }
    }

    std::cout << "gradcheck " << structure_str << " depth=" << depth << " width=" << width
              << " rank=" << rank << " pre_num=" << pre_num << ": max relative error "
              << format_double(max_rel) << " over " << checked << " coordinates\n";
    return max_rel < 1e-6 ? kExitOk : kExitNumeric;
  });
}

int cmd_ablate(const std::string& config_path, const std::vector<int>& pre_num_list,
               const std::string& structure_str, const std::string& out_dir) {
  return guarded([&] {
    if (pre_num_list.empty()) {
      throw std::invalid_argument("cmd_ablate: pre_num list must be non-empty");
    }
    ExperimentConfig cfg = load_config(config_path);
    cfg.structure = structure_from_string(structure_str.empty() ? "bs" : structure_str);
    const std::string dest = out_dir.empty() ? cfg.out_dir : out_dir;

    const TaskSetup setup = make_task_for_config(cfg);
    const TrainConfig tc{cfg.steps, cfg.batch_size, cfg.learning_rate,
                         cfg.optimizer, cfg.seed,   cfg.window_capacity};

    std::vector<TrainResult> runs;
    for (int pre_num : pre_num_list) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.pre_num = pre_num;
      runs.push_back(train(make_model_for_config(run_cfg, setup.base), setup.task, tc));
    }

    std::string csv = "step";
    for (int pre_num : pre_num_list) {
      csv += ",pre_num_" + std::to_string(pre_num);
    }
    csv += '\n';
    for (int step = 0; step < cfg.steps; ++step) {
      csv += std::to_string(step);
      for (const auto& run : runs) {
        csv += ',';
        csv += format_double(run.curve[step].loss);
      }
      csv += '\n';
    }
    write_text_atomic(join_path(dest, "ablate.csv"), csv);

    // F-norm comparison: reference run = last list entry, plain-LoRA run
    // reused from the list when pre_num 0 is present (bitwise-equal to
    // structure none), trained separately otherwise.
    const TrainResult& reference = runs.back();
    std::vector<Matrix> plain_deltas;
    {
      const auto it = std::find(pre_num_list.begin(), pre_num_list.end(), 0);
      if (it != pre_num_list.end()) {
        const auto& plain_run = runs[static_cast<std::size_t>(it - pre_num_list.begin())];
        plain_deltas = merged_weight_deltas(plain_run.model, plain_run.windows);
      } else {
        ExperimentConfig plain_cfg = cfg;
        plain_cfg.structure = Structure::none;
        plain_cfg.pre_num = 0;
        const TrainResult plain_run =
            train(make_model_for_config(plain_cfg, setup.base), setup.task, tc);
        plain_deltas = merged_weight_deltas(plain_run.model, plain_run.windows);
      }
    }
    const std::vector<Matrix> ref_deltas =
        merged_weight_deltas(reference.model, reference.windows);

    std::string fnorm_csv = "layer,fnorm_diff\n";
    for (std::size_t n = 0; n < ref_deltas.size(); ++n) {
      fnorm_csv += std::to_string(n);
      fnorm_csv += ',';
      fnorm_csv += format_double(frobenius_norm(ref_deltas[n]) - frobenius_norm(plain_deltas[n]));
      fnorm_csv += '\n';
    }
    write_text_atomic(join_path(dest, "fnorm_diff.csv"), fnorm_csv);

    std::cout << "ablation over " << pre_num_list.size() << " pre_num values ("
              << to_string(cfg.structure) << ")\n"
              << "wrote " << join_path(dest, "ablate.csv") << ", "
              << join_path(dest, "fnorm_diff.csv") << "\n";
    return kExitOk;
  });
}

}  // namespace reslora
