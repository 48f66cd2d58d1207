// Copyright 2026 The qatlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Declarative experiment description. Resolution order: defaults, preset,
// config file, then --set overrides. Unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "qatlab/common.hpp"

namespace qatlab {

using Json = nlohmann::ordered_json;

struct DatasetConfig {
  std::string format = "synthetic";  // idx | csv | synthetic
  std::string path;                  // idx images / csv file
  std::string labels;                // idx labels
  std::size_t train_size = 5000;     // synthetic only
  std::size_t val_size = 1000;       // synthetic: generated; files: taken from the end
  int num_classes = 10;              // synthetic only
  std::size_t image_size = 17;       // synthetic only
  std::uint64_t seed = 0;            // synthetic only; independent of the training seed
};

struct ExperimentConfig {
  std::string preset;  // informational
  std::uint64_t seed = 0;
  std::string arch = "cnn-small";
  DatasetConfig dataset;
  std::size_t epochs = 10;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 128;
  double beta = 0.25;
  double ema_alpha = 0.99;
  double ema_epsilon = 1e-5;
  std::vector<int> b_set{2, 3, 4};
  double b_avg = 3.0;
  int fixed_bits = 3;
  std::size_t n_sens_batches = 8;
  std::size_t calib_batches = 4;
  std::string codebook_init = "quantile";  // quantile | random-normal | uniform
  bool codebook_learning = true;
  std::string precision = "mixed";  // mixed | fixed
  // Input artifacts (paths without extension for checkpoints).
  std::string checkpoint;
  std::string sensitivity;
  std::string assignment;
};

inline Json to_json(const DatasetConfig& d) {
  return Json{{"format", d.format},         {"path", d.path},         {"labels", d.labels},
              {"train_size", d.train_size}, {"val_size", d.val_size}, {"num_classes", d.num_classes},
              {"image_size", d.image_size}, {"seed", d.seed}};
}

inline Json to_json(const ExperimentConfig& c) {
  return Json{{"preset", c.preset},
              {"seed", c.seed},
              {"arch", c.arch},
              {"dataset", to_json(c.dataset)},
              {"epochs", c.epochs},
              {"lr0", c.lr0},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"beta", c.beta},
              {"ema_alpha", c.ema_alpha},
              {"ema_epsilon", c.ema_epsilon},
              {"b_set", c.b_set},
              {"b_avg", c.b_avg},
              {"fixed_bits", c.fixed_bits},
              {"n_sens_batches", c.n_sens_batches},
              {"calib_batches", c.calib_batches},
              {"codebook_init", c.codebook_init},
              {"codebook_learning", c.codebook_learning},
              {"precision", c.precision},
              {"checkpoint", c.checkpoint},
              {"sensitivity", c.sensitivity},
              {"assignment", c.assignment}};
}

namespace detail {

template <class V>
void read_field(const Json& j, const char* key, V& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
    if (it->is_number_integer() && it->template get<long long>() < 0) {
      throw ConfigError("config key '" + where + key + "' must be nonnegative");
    }
  }
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + where + key + "': " + e.what());
  }
}

inline void reject_unknown(const Json& j, const Json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.arch != "cnn-small" && c.arch != "mlp-small") fail("arch must be cnn-small or mlp-small");
  const auto& d = c.dataset;
  if (d.format != "idx" && d.format != "csv" && d.format != "synthetic") fail("dataset.format must be idx, csv or synthetic");
  if (d.format != "synthetic" && d.path.empty()) fail("dataset.path is required for " + d.format + " datasets");
  if (d.format == "idx" && d.labels.empty()) fail("dataset.labels is required for idx datasets");
  if (d.format == "synthetic" && (d.train_size < 1 || d.num_classes < 2 || d.image_size < 5)) {
    fail("synthetic dataset needs train_size >= 1, num_classes >= 2, image_size >= 5");
  }
  if (!(c.lr0 > 0.0 && c.lr0 <= 10.0)) fail("lr0 must lie in (0, 10]");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0 && c.weight_decay < 1.0)) fail("weight_decay must lie in [0, 1)");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (!(c.beta >= 0.0)) fail("beta must be >= 0");
  if (!(c.ema_alpha > 0.0 && c.ema_alpha < 1.0)) fail("ema_alpha must lie in (0, 1)");
  if (!(c.ema_epsilon > 0.0 && c.ema_epsilon < 1.0)) fail("ema_epsilon must lie in (0, 1)");
  if (c.b_set.empty()) fail("b_set must be non-empty");
  for (std::size_t i = 0; i < c.b_set.size(); ++i) {
    if (c.b_set[i] < 2 || c.b_set[i] > 8) fail("b_set members must lie in [2, 8]");
    if (i > 0 && c.b_set[i] <= c.b_set[i - 1]) fail("b_set must be strictly ascending");
  }
  if (c.precision != "mixed" && c.precision != "fixed") fail("precision must be mixed or fixed");
  if (c.precision == "mixed" && !(c.b_avg >= c.b_set.front() && c.b_avg <= c.b_set.back())) {
    fail("b_avg must lie within [min(b_set), max(b_set)]");
  }
  if (c.fixed_bits < 2 || c.fixed_bits > 8) fail("fixed_bits must lie in [2, 8]");
  if (c.n_sens_batches < 1) fail("n_sens_batches must be >= 1");
  if (c.calib_batches < 1) fail("calib_batches must be >= 1");
  if (c.codebook_init != "quantile" && c.codebook_init != "random-normal" && c.codebook_init != "uniform") {
    fail("codebook_init must be quantile, random-normal or uniform");
  }
}

inline ExperimentConfig config_from_json(const Json& j) {
  const ExperimentConfig defaults;
  detail::reject_unknown(j, to_json(defaults), "");
  ExperimentConfig c;
  detail::read_field(j, "preset", c.preset, "");
  detail::read_field(j, "seed", c.seed, "");
  detail::read_field(j, "arch", c.arch, "");
  if (auto it = j.find("dataset"); it != j.end()) {
    detail::reject_unknown(*it, to_json(defaults.dataset), "dataset.");
    auto& d = c.dataset;
    detail::read_field(*it, "format", d.format, "dataset.");
    detail::read_field(*it, "path", d.path, "dataset.");
    detail::read_field(*it, "labels", d.labels, "dataset.");
    detail::read_field(*it, "train_size", d.train_size, "dataset.");
    detail::read_field(*it, "val_size", d.val_size, "dataset.");
    detail::read_field(*it, "num_classes", d.num_classes, "dataset.");
    detail::read_field(*it, "image_size", d.image_size, "dataset.");
    detail::read_field(*it, "seed", d.seed, "dataset.");
  }
  detail::read_field(j, "epochs", c.epochs, "");
  detail::read_field(j, "lr0", c.lr0, "");
  detail::read_field(j, "momentum", c.momentum, "");
  detail::read_field(j, "weight_decay", c.weight_decay, "");
  detail::read_field(j, "batch_size", c.batch_size, "");
  detail::read_field(j, "beta", c.beta, "");
  detail::read_field(j, "ema_alpha", c.ema_alpha, "");
  detail::read_field(j, "ema_epsilon", c.ema_epsilon, "");
  detail::read_field(j, "b_set", c.b_set, "");
  detail::read_field(j, "b_avg", c.b_avg, "");
  detail::read_field(j, "fixed_bits", c.fixed_bits, "");
  detail::read_field(j, "n_sens_batches", c.n_sens_batches, "");
  detail::read_field(j, "calib_batches", c.calib_batches, "");
  detail::read_field(j, "codebook_init", c.codebook_init, "");
  detail::read_field(j, "codebook_learning", c.codebook_learning, "");
  detail::read_field(j, "precision", c.precision, "");
  detail::read_field(j, "checkpoint", c.checkpoint, "");
  detail::read_field(j, "sensitivity", c.sensitivity, "");
  detail::read_field(j, "assignment", c.assignment, "");
  validate(c);
  return c;
}

// Ablation presets over codebook init, codebook learning and allocation.
inline const std::map<std::string, Json>& presets() {
  static const std::map<std::string, Json> table = {
      // Uniform weight grid, no codebook learning, fixed 3-bit.
      {"tbl44-configA",
       {{"codebook_init", "uniform"}, {"codebook_learning", false}, {"precision", "fixed"}, {"fixed_bits", 3}, {"beta", 0.0}}},
      {"tbl44-configB", {{"codebook_init", "random-normal"}, {"codebook_learning", true}, {"precision", "mixed"}, {"b_avg", 2.8}}},
      {"tbl44-configC", {{"codebook_init", "quantile"}, {"codebook_learning", false}, {"precision", "mixed"}, {"b_avg", 2.8}}},
      {"tbl44-configD", {{"codebook_init", "quantile"}, {"codebook_learning", true}, {"precision", "fixed"}, {"fixed_bits", 3}}},
      {"tbl44-configE", {{"codebook_init", "quantile"}, {"codebook_learning", true}, {"precision", "mixed"}, {"b_avg", 2.8}}},
      {"tbl44-configF", {{"codebook_init", "quantile"}, {"codebook_learning", true}, {"precision", "mixed"}, {"b_avg", 3.0}}},
  };
  return table;
}

// Applies "a.b=value"; value is parsed as JSON when possible, else taken as a string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed --set key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("--set key '" + key + "' descends into a non-object");
    start = dot + 1;
  }
}

namespace detail {

inline void merge_into(Json& base, const Json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

}  // namespace detail

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline ExperimentConfig resolve_config(const std::string& preset, const std::string& config_path,
                                       const std::vector<std::string>& sets) {
  Json j = to_json(ExperimentConfig{});
  if (!preset.empty()) {
    auto it = presets().find(preset);
    if (it == presets().end()) throw ConfigError("unknown preset '" + preset + "'");
    detail::merge_into(j, it->second);
    j["preset"] = preset;
  }
  if (!config_path.empty()) {
    Json file;
    try {
      file = read_json_file(config_path);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
    if (!file.is_object()) throw ConfigError(config_path + ": config must be a JSON object");
    detail::reject_unknown(file, j, "");
    detail::merge_into(j, file);
  }
  for (const auto& s : sets) apply_override(j, s);
  return config_from_json(j);
}

}  // namespace qatlab
