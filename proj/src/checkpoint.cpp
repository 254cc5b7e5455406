// SPDX-License-Identifier: Apache-2.0
#include "reslora/checkpoint.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <system_error>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace reslora {

namespace {

const char* const kConfigKeys[] = {
    "structure",     "depth",      "width",         "rank",       "alpha",
    "pre_num",       "activation", "base_gain",     "steps",      "batch_size",
    "learning_rate", "optimizer",  "seed",          "task_seed",  "task_shift",
    "window_capacity", "out_dir",
};

[[noreturn]] void bad_field(const std::string& field, const std::string& what) {
  throw ConfigError("config field '" + field + "': " + what);
}

int get_int(const json& j, const char* field, int fallback, int min_value) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (!v.is_number_integer()) bad_field(field, "expected an integer");
  const auto value = v.get<int>();
  if (value < min_value) {
    bad_field(field, "must be >= " + std::to_string(min_value) + ", got " +
                         std::to_string(value));
  }
  return value;
}

double get_positive_real(const json& j, const char* field, double fallback) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (!v.is_number()) bad_field(field, "expected a number");
  const auto value = v.get<double>();
  if (!(value > 0.0)) bad_field(field, "must be positive");
  return value;
}

double get_nonnegative_real(const json& j, const char* field, double fallback) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (!v.is_number()) bad_field(field, "expected a number");
  const auto value = v.get<double>();
  if (value < 0.0) bad_field(field, "must be >= 0");
  return value;
}

std::uint64_t get_seed(const json& j, const char* field, std::uint64_t fallback) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (!v.is_number_unsigned() && !v.is_number_integer()) bad_field(field, "expected an integer");
  if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
    bad_field(field, "must be >= 0");
  }
  return v.get<std::uint64_t>();
}

std::string get_string(const json& j, const char* field, const std::string& fallback) {
  if (!j.contains(field)) return fallback;
  const auto& v = j.at(field);
  if (!v.is_string()) bad_field(field, "expected a string");
  return v.get<std::string>();
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
    throw ConfigError(what + ": expected a non-empty nested array of numbers");
  }
  Matrix m(j.size(), j.front().size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& row = j.at(i);
    if (!row.is_array() || row.size() != m.cols()) {
      throw ConfigError(what + ": ragged row " + std::to_string(i));
    }
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!row.at(c).is_number()) throw ConfigError(what + ": non-numeric entry");
      m(i, c) = row.at(c).get<double>();
    }
  }
  return m;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* key : kConfigKeys) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown field '" + item.key() + "'");
  }

  ExperimentConfig cfg;
  try {
    cfg.structure = structure_from_string(get_string(j, "structure", "none"));
    cfg.activation = activation_from_string(get_string(j, "activation", "tanh"));
    cfg.optimizer = optimizer_from_string(get_string(j, "optimizer", "adam"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.depth = get_int(j, "depth", cfg.depth, 1);
  cfg.width = get_int(j, "width", cfg.width, 1);
  cfg.rank = get_int(j, "rank", cfg.rank, 1);
  cfg.alpha = get_positive_real(j, "alpha", cfg.alpha);
  cfg.pre_num = get_int(j, "pre_num", cfg.pre_num, -1);
  cfg.base_gain = get_positive_real(j, "base_gain", cfg.base_gain);
  cfg.steps = get_int(j, "steps", cfg.steps, 1);
  cfg.batch_size = get_int(j, "batch_size", cfg.batch_size, 1);
  cfg.learning_rate = get_positive_real(j, "learning_rate", cfg.learning_rate);
  cfg.seed = get_seed(j, "seed", cfg.seed);
  cfg.task_seed = get_seed(j, "task_seed", cfg.task_seed);
  cfg.task_shift = get_nonnegative_real(j, "task_shift", cfg.task_shift);
  cfg.window_capacity = get_int(j, "window_capacity", cfg.window_capacity, 1);
  cfg.out_dir = get_string(j, "out_dir", cfg.out_dir);
  if (cfg.rank > cfg.width) {
    throw ConfigError("config field 'rank': must be <= width (" + std::to_string(cfg.rank) +
                      " > " + std::to_string(cfg.width) + ")");
  }
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  return json{{"structure", to_string(cfg.structure)},
              {"depth", cfg.depth},
              {"width", cfg.width},
              {"rank", cfg.rank},
              {"alpha", cfg.alpha},
              {"pre_num", cfg.pre_num},
              {"activation", to_string(cfg.activation)},
              {"base_gain", cfg.base_gain},
              {"steps", cfg.steps},
              {"batch_size", cfg.batch_size},
              {"learning_rate", cfg.learning_rate},
              {"optimizer", to_string(cfg.optimizer)},
              {"seed", cfg.seed},
              {"task_seed", cfg.task_seed},
              {"task_shift", cfg.task_shift},
              {"window_capacity", cfg.window_capacity},
              {"out_dir", cfg.out_dir}};
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const ResLoraModel& model,
                           const std::vector<NormWindow>& windows) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.structure = model.structure();
  for (const auto& layer : model.layers()) {
    ckpt.w.push_back(layer.base.w);
    ckpt.a.push_back(layer.adapter.a);
    ckpt.b.push_back(layer.adapter.b);
  }
  for (const auto& window : windows) {
    ckpt.norm_windows.emplace_back(window.values().begin(), window.values().end());
  }
  return ckpt;
}

ResLoraModel model_from_checkpoint(const Checkpoint& ckpt) {
  std::vector<Layer> layers;
  const double scale = ckpt.config.alpha / static_cast<double>(ckpt.config.rank);
  for (std::size_t n = 0; n < ckpt.w.size(); ++n) {
    Layer layer;
    layer.base = BaseLayer{ckpt.w[n], ckpt.config.activation};
    layer.adapter = AdapterBlock{ckpt.a[n], ckpt.b[n], ckpt.config.rank, scale};
    layers.push_back(std::move(layer));
  }
  return ResLoraModel(std::move(layers), ckpt.structure, ckpt.config.pre_num);
}

std::vector<NormWindow> windows_from_checkpoint(const Checkpoint& ckpt) {
  std::vector<NormWindow> windows;
  for (const auto& values : ckpt.norm_windows) {
    NormWindow window(static_cast<std::size_t>(ckpt.config.window_capacity));
    for (double v : values) window.push(v);
    windows.push_back(std::move(window));
  }
  return windows;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json layers = json::array();
  for (std::size_t n = 0; n < ckpt.w.size(); ++n) {
    layers.push_back(json{{"w", matrix_to_json(ckpt.w[n])},
                          {"a", matrix_to_json(ckpt.a[n])},
                          {"b", matrix_to_json(ckpt.b[n])}});
  }
  const json j{{"format_version", ckpt.format_version},
               {"config", config_to_json(ckpt.config)},
               {"structure", to_string(ckpt.structure)},
               {"layers", std::move(layers)},
               {"norm_windows", ckpt.norm_windows}};
  write_text_atomic(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
  try {
    Checkpoint ckpt;
    if (!j.contains("format_version") || !j.at("format_version").is_number_integer()) {
      throw ConfigError("checkpoint " + path + ": missing format_version");
    }
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != 1) {
      throw ConfigError("checkpoint " + path + ": unsupported format_version " +
                        std::to_string(ckpt.format_version));
    }
    ckpt.config = config_from_json(j.at("config"));
    ckpt.structure = structure_from_string(j.at("structure").get<std::string>());
    if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty()) {
      throw ConfigError("checkpoint " + path + ": missing layers");
    }
    std::size_t n = 0;
    for (const auto& layer : j.at("layers")) {
      const std::string where = "checkpoint layer " + std::to_string(n++);
      ckpt.w.push_back(matrix_from_json(layer.at("w"), where + " w"));
      ckpt.a.push_back(matrix_from_json(layer.at("a"), where + " a"));
      ckpt.b.push_back(matrix_from_json(layer.at("b"), where + " b"));
    }
    if (j.contains("norm_windows")) {
      for (const auto& wj : j.at("norm_windows")) {
        ckpt.norm_windows.push_back(wj.get<std::vector<double>>());
      }
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
}

void save_merged(const MergedModel& merged, const ExperimentConfig& cfg,
                 const std::string& path) {
  json layers = json::array();
  for (const auto& layer : merged.layers) {
    layers.push_back(json{{"w", matrix_to_json(layer.w)}});
  }
  const json j{{"format_version", 1},
               {"config", config_to_json(cfg)},
               {"layers", std::move(layers)}};
  write_text_atomic(path, j.dump(2) + "\n");
}

std::pair<MergedModel, ExperimentConfig> load_merged(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("merged model " + path + ": " + e.what());
  }
  const ExperimentConfig cfg = config_from_json(j.at("config"));
  MergedModel merged;
  for (const auto& layer : j.at("layers")) {
    merged.layers.push_back(
        {matrix_from_json(layer.at("w"), "merged layer w"), cfg.activation});
  }
  if (merged.layers.empty()) {
    throw ConfigError("merged model " + path + ": no layers");
  }
  return {std::move(merged), cfg};
}

void save_merge_report(const MergeReport& report, const std::string& path) {
  const json j{{"method", report.method},
               {"alpha_star", report.alpha_star},
               {"mean_div", report.mean_div},
               {"max_div", report.max_div},
               {"loss_delta", report.loss_delta}};
  write_text_atomic(path, j.dump(2) + "\n");
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path + " for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace reslora
