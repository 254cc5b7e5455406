// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "reslora/commands.hpp"
#include "test_util.hpp"

using namespace reslora;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("reslora_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_config(const TempDir& dir, const json& j, const std::string& name = "cfg.json") {
  const std::string path = dir.file(name);
  std::ofstream out(path);
  out << j.dump(2);
  return path;
}

int count_lines(const std::string& text) {
  int lines = 0;
  for (char c : text) lines += (c == '\n');
  return lines;
}

}  // namespace

TEST_CASE("config defaults follow the standard hyperparameters") {
  const ExperimentConfig cfg = config_from_json(json::object());
  CHECK(cfg.rank == 4);
  CHECK(cfg.alpha == 8.0);
  CHECK(cfg.pre_num == 4);
  CHECK(cfg.structure == Structure::none);
  CHECK(cfg.window_capacity == 64);
}

TEST_CASE("config errors name the offending field") {
  CHECK_THROWS_WITH_AS(config_from_json(json{{"depth", "four"}}),
                       doctest::Contains("depth"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"bogus_key", 1}}),
                       doctest::Contains("bogus_key"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"rank", 12}, {"width", 6}}),
                       doctest::Contains("rank"), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"structure", "xs"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"steps", 0}}), ConfigError);
}

TEST_CASE("cmd_train writes loss.csv and a reloadable checkpoint") {
  TempDir dir;
  const auto cfg_path = write_config(
      dir, json{{"structure", "is"}, {"depth", 3}, {"width", 6}, {"rank", 2},
                {"steps", 10}, {"seed", 4}, {"task_seed", 9}});
  REQUIRE(cmd_train(cfg_path, dir.file("run")) == kExitOk);

  const std::string csv = read_text(dir.file("run/loss.csv"));
  CHECK(csv.rfind("step,loss\n", 0) == 0);
  CHECK(count_lines(csv) == 11);  // header + 10 steps

  const Checkpoint ckpt = load_checkpoint(dir.file("run/checkpoint.json"));
  CHECK(ckpt.structure == Structure::input_shortcut);
  CHECK(ckpt.w.size() == 3);
  CHECK(ckpt.norm_windows.size() == 3);
  CHECK(ckpt.norm_windows[0].size() == 10);
  const ResLoraModel model = model_from_checkpoint(ckpt);
  CHECK(model.depth() == 3);

  SUBCASE("invalid config exits with a usage error") {
    const auto bad = write_config(dir, json{{"depth", -1}}, "bad.json");
    CHECK(cmd_train(bad, dir.file("x")) == kExitUsage);
    CHECK(cmd_train(dir.file("missing.json"), dir.file("x")) == kExitUsage);
  }

  SUBCASE("divergence exits with the numerical-failure code") {
    const auto hot = write_config(
        dir, json{{"activation", "identity"}, {"optimizer", "sgd"}, {"learning_rate", 1e9},
                  {"task_shift", 0.5}, {"depth", 2}, {"width", 4}, {"rank", 2},
                  {"steps", 200}},
        "hot.json");
    CHECK(cmd_train(hot, dir.file("hot_run")) == kExitNumeric);
  }
}

TEST_CASE("identical configs produce byte-identical outputs") {
  TempDir dir;
  const auto cfg_path = write_config(
      dir, json{{"structure", "bs"}, {"pre_num", 2}, {"depth", 3}, {"width", 6},
                {"rank", 2}, {"steps", 12}, {"seed", 2}});
  REQUIRE(cmd_train(cfg_path, dir.file("a")) == kExitOk);
  REQUIRE(cmd_train(cfg_path, dir.file("b")) == kExitOk);
  CHECK(read_text(dir.file("a/loss.csv")) == read_text(dir.file("b/loss.csv")));
  CHECK(read_text(dir.file("a/checkpoint.json")) == read_text(dir.file("b/checkpoint.json")));
}

TEST_CASE("checkpoint write-read-write is byte identical") {
  TempDir dir;
  const auto cfg_path = write_config(
      dir, json{{"structure", "ms"}, {"pre_num", 1}, {"depth", 3}, {"width", 5},
                {"rank", 2}, {"steps", 8}});
  REQUIRE(cmd_train(cfg_path, dir.file("run")) == kExitOk);
  const std::string original = read_text(dir.file("run/checkpoint.json"));
  const Checkpoint ckpt = load_checkpoint(dir.file("run/checkpoint.json"));
  save_checkpoint(ckpt, dir.file("copy.json"));
  CHECK(read_text(dir.file("copy.json")) == original);
}

TEST_CASE("cmd_merge on a bs checkpoint is exact and non-destructive") {
  TempDir dir;
  const auto cfg_path = write_config(
      dir, json{{"structure", "bs"}, {"pre_num", 2}, {"depth", 4}, {"width", 8},
                {"rank", 2}, {"steps", 30}});
  REQUIRE(cmd_train(cfg_path, dir.file("run")) == kExitOk);
  const std::string checkpoint_before = read_text(dir.file("run/checkpoint.json"));

  REQUIRE(cmd_merge(dir.file("run/checkpoint.json"), "exact", dir.file("m")) == kExitOk);
  CHECK(read_text(dir.file("run/checkpoint.json")) == checkpoint_before);

  const json report = json::parse(read_text(dir.file("m/merge_report.json")));
  CHECK(report.at("method") == "exact_bs");
  CHECK(report.at("max_div").get<double>() < 1e-10);
  CHECK(report.at("alpha_star").size() == 4);

  SUBCASE("bs checkpoint rejects estimated methods") {
    CHECK(cmd_merge(dir.file("run/checkpoint.json"), "bi", dir.file("m2")) == kExitUsage);
  }
  SUBCASE("merged model evaluates to the checkpoint loss") {
    REQUIRE(cmd_eval(dir.file("run/checkpoint.json"), "", std::nullopt, dir.file("e1")) ==
            kExitOk);
    REQUIRE(cmd_eval("", dir.file("m/merged.json"), std::nullopt, dir.file("e2")) == kExitOk);
    const double l1 =
        json::parse(read_text(dir.file("e1/metrics.json"))).at("task_loss").get<double>();
    const double l2 =
        json::parse(read_text(dir.file("e2/metrics.json"))).at("task_loss").get<double>();
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-9));

    // The trained checkpoint beats a fresh (zero-B) model on the same task.
    const Checkpoint trained = load_checkpoint(dir.file("run/checkpoint.json"));
    const ResLoraModel fresh =
        make_model_for_config(trained.config, make_task_for_config(trained.config).base);
    save_checkpoint(make_checkpoint(trained.config, fresh, {}), dir.file("fresh.json"));
    REQUIRE(cmd_eval(dir.file("fresh.json"), "", std::nullopt, dir.file("e3")) == kExitOk);
    const double untrained =
        json::parse(read_text(dir.file("e3/metrics.json"))).at("task_loss").get<double>();
    CHECK(l1 < untrained);
  }
}

TEST_CASE("cmd_merge is-structure report and ordering") {
  TempDir dir;
  const auto cfg_path = write_config(
      dir, json{{"structure", "is"}, {"depth", 6}, {"width", 12}, {"rank", 3},
                {"steps", 150}, {"seed", 3}, {"task_seed", 11}, {"task_shift", 0.01}});
  REQUIRE(cmd_train(cfg_path, dir.file("run")) == kExitOk);

  REQUIRE(cmd_merge(dir.file("run/checkpoint.json"), "no", dir.file("no")) == kExitOk);
  const json rep_no = json::parse(read_text(dir.file("no/merge_report.json")));
  CHECK(rep_no.at("alpha_star")[0].get<double>() == 1.0);  // exact first-layer factor
  for (std::size_t n = 1; n < 6; ++n) {
    CHECK(rep_no.at("alpha_star")[n].get<double>() == 0.0);
  }

  REQUIRE(cmd_merge(dir.file("run/checkpoint.json"), "bi", dir.file("bi")) == kExitOk);
  const json rep_bi = json::parse(read_text(dir.file("bi/merge_report.json")));
  CHECK(rep_bi.at("mean_div").get<double>() < rep_no.at("mean_div").get<double>());

  SUBCASE("empty windows make method bi fail loudly") {
    Checkpoint ckpt = load_checkpoint(dir.file("run/checkpoint.json"));
    ckpt.norm_windows.clear();
    save_checkpoint(ckpt, dir.file("no_windows.json"));
    CHECK(cmd_merge(dir.file("no_windows.json"), "bi", dir.file("x")) == kExitUsage);
  }
}

TEST_CASE("cmd_eval of an untrained checkpoint equals the frozen-base loss") {
  TempDir dir;
  ExperimentConfig cfg;
  cfg.structure = Structure::input_shortcut;
  cfg.depth = 3;
  cfg.width = 6;
  cfg.rank = 2;
  const TaskSetup setup = make_task_for_config(cfg);
  const ResLoraModel fresh = make_model_for_config(cfg, setup.base);  // B = 0
  save_checkpoint(make_checkpoint(cfg, fresh, {}), dir.file("fresh.json"));
  REQUIRE(cmd_eval(dir.file("fresh.json"), "", std::nullopt, dir.file("e")) == kExitOk);

  const Matrix eval_x = eval_inputs_for_task(setup.task);
  const double base_loss = mse_loss(base_forward(setup.base, eval_x), setup.task.target(eval_x));
  const double got =
      json::parse(read_text(dir.file("e/metrics.json"))).at("task_loss").get<double>();
  CHECK(got == doctest::Approx(base_loss));

  CHECK(cmd_eval(dir.file("fresh.json"), dir.file("fresh.json"), std::nullopt,
                 dir.file("e2")) == kExitUsage);
  CHECK(cmd_eval("", "", std::nullopt, dir.file("e3")) == kExitUsage);
}

TEST_CASE("cmd_gradcheck passes on every structure and catches corruption") {
  for (const char* structure : {"none", "is", "bs", "ms"}) {
    CHECK(cmd_gradcheck(structure, 4, 6, 2, 1, 2) == kExitOk);
  }
  CHECK(cmd_gradcheck("is", 3, 5, 2, 1, 0, /*corrupt_gradient=*/true) == kExitNumeric);
  CHECK(cmd_gradcheck("xs", 3, 5, 2, 1, 0) == kExitUsage);
}

TEST_CASE("cmd_ablate emits one loss column per pre_num and L fnorm rows") {
  TempDir dir;
  const auto cfg_path = write_config(
      dir, json{{"depth", 3}, {"width", 6}, {"rank", 2}, {"steps", 20}, {"seed", 2},
                {"task_seed", 5}});
  REQUIRE(cmd_ablate(cfg_path, {0, 1, -1}, "bs", dir.file("ab")) == kExitOk);

  const std::string csv = read_text(dir.file("ab/ablate.csv"));
  CHECK(csv.rfind("step,pre_num_0,pre_num_1,pre_num_-1\n", 0) == 0);
  CHECK(count_lines(csv) == 21);

  const std::string fnorm = read_text(dir.file("ab/fnorm_diff.csv"));
  CHECK(fnorm.rfind("layer,fnorm_diff\n", 0) == 0);
  CHECK(count_lines(fnorm) == 4);  // header + one row per layer

  // pre_num 0 column matches a plain-LoRA training run with the same seeds.
  const auto plain_cfg = write_config(
      dir, json{{"structure", "none"}, {"pre_num", 0}, {"depth", 3}, {"width", 6},
                {"rank", 2}, {"steps", 20}, {"seed", 2}, {"task_seed", 5}},
      "plain.json");
  REQUIRE(cmd_train(plain_cfg, dir.file("plain_run")) == kExitOk);
  const std::string plain_csv = read_text(dir.file("plain_run/loss.csv"));

  auto column = [](const std::string& text, std::size_t col) {
    std::vector<std::string> cells;
    std::size_t pos = text.find('\n') + 1;  // skip header
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      std::string line = text.substr(pos, end - pos);
      std::size_t start = 0;
      for (std::size_t c = 0; c < col; ++c) start = line.find(',', start) + 1;
      std::size_t stop = line.find(',', start);
      cells.push_back(line.substr(start, stop - start));
      pos = end + 1;
    }
    return cells;
  };
  CHECK(column(csv, 1) == column(plain_csv, 1));

  CHECK(cmd_ablate(cfg_path, {}, "bs", dir.file("ab2")) == kExitUsage);
}
