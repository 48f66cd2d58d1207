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

// On-disk artifacts.
//
// Checkpoint = <base>.json manifest + <base>.bin blob. The blob is the raw
// little-endian float32 values of every tensor listed in the manifest,
// concatenated in manifest order. Quantizer state (codebooks, scales,
// thresholds) lives in the manifest.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "qatlab/config.hpp"
#include "qatlab/harness.hpp"
#include "qatlab/model.hpp"
#include "qatlab/precision_alloc.hpp"

namespace qatlab {

inline constexpr int kFormatVersion = 1;

// Writes via a temporary file in the same directory, then renames.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_json_atomic(const std::filesystem::path& path, const Json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

// --- sensitivity / assignment documents -----------------------------------

inline Json to_json(const SensitivityProfile& p) {
  return Json{{"format_version", kFormatVersion}, {"layers", p.layers}, {"scores", p.scores}, {"n_batches", p.n_batches}};
}

inline SensitivityProfile sensitivity_from_json(const Json& j) {
  SensitivityProfile p;
  try {
    p.scores = j.at("scores").get<std::vector<double>>();
    if (j.contains("layers")) p.layers = j.at("layers").get<std::vector<std::string>>();
    if (j.contains("n_batches")) p.n_batches = j.at("n_batches").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sensitivity document: ") + e.what());
  }
  if (p.scores.empty()) throw FormatError("sensitivity document has no scores");
  if (!p.layers.empty() && p.layers.size() != p.scores.size()) throw FormatError("sensitivity layers/scores length mismatch");
  for (double s : p.scores)
    if (!(s >= 0.0)) throw FormatError("sensitivity scores must be nonnegative");
  return p;
}

inline Json to_json(const BitAssignment& a, const std::vector<std::string>& layers = {}) {
  Json j{{"format_version", kFormatVersion}};
  j["layers"] = layers;
  j["b_prime"] = a.b_prime;
  j["bits"] = a.bits;
  j["b_set"] = a.b_set;
  j["b_avg"] = a.b_avg;
  j["b_total"] = a.b_total;
  j["target_total"] = a.target_total;
  j["budget_gap"] = a.budget_gap;
  j["unfulfilled_steps"] = a.unfulfilled_steps;
  j["upgrade_order"] = a.upgrade_order;
  j["downgrade_order"] = a.downgrade_order;
  return j;
}

inline BitAssignment assignment_from_json(const Json& j) {
  BitAssignment a;
  try {
    a.bits = j.at("bits").get<std::vector<int>>();
    a.b_set = j.at("b_set").get<std::vector<int>>();
    a.b_avg = j.at("b_avg").get<double>();
    a.b_prime = j.value("b_prime", std::vector<double>{});
    a.b_total = j.value("b_total", 0.0);
    a.target_total = j.value("target_total", 0L);
    a.budget_gap = j.value("budget_gap", 0L);
    a.unfulfilled_steps = j.value("unfulfilled_steps", 0L);
    a.upgrade_order = j.value("upgrade_order", std::vector<std::size_t>{});
    a.downgrade_order = j.value("downgrade_order", std::vector<std::size_t>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("assignment document: ") + e.what());
  }
  for (int b : a.bits)
    if (std::find(a.b_set.begin(), a.b_set.end(), b) == a.b_set.end()) throw FormatError("assigned bit-width outside b_set");
  return a;
}

// --- checkpoint --------------------------------------------------------------

inline Json to_json(const Codebook& cb) {
  return Json{{"bits", cb.bit_width},   {"levels", cb.levels}, {"ema_counts", cb.ema_counts},
              {"ema_sums", cb.ema_sums}, {"alpha", cb.alpha},   {"epsilon", cb.epsilon}};
}

inline Codebook codebook_from_json(const Json& j) {
  Codebook cb;
  cb.bit_width = j.at("bits").get<int>();
  cb.levels = j.at("levels").get<std::vector<double>>();
  cb.ema_counts = j.at("ema_counts").get<std::vector<double>>();
  cb.ema_sums = j.at("ema_sums").get<std::vector<double>>();
  cb.alpha = j.at("alpha").get<double>();
  cb.epsilon = j.at("epsilon").get<double>();
  cb.validate();
  return cb;
}

struct Checkpoint {
  TrainState state;
  Json config;   // resolved config echo
  Json metrics;  // summary
};

namespace detail {

inline void append_le_floats(std::string& blob, std::span<const float> values) {
  const auto start = blob.size();
  blob.resize(start + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    const std::array<char, 4> b{static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    std::memcpy(blob.data() + start + i * 4, b.data(), 4);
  }
}

inline std::vector<float> read_le_floats(const std::string& blob, std::size_t offset, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset + i * 4);
    const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
                               (std::uint32_t{p[3]} << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline std::filesystem::path with_ext(const std::filesystem::path& base, const char* ext) {
  auto p = base;
  p += ext;
  return p;
}

}  // namespace detail

inline std::filesystem::path manifest_path(const std::filesystem::path& base) { return detail::with_ext(base, ".json"); }
inline std::filesystem::path blob_path(const std::filesystem::path& base) { return detail::with_ext(base, ".bin"); }

inline Json checkpoint_manifest(const Checkpoint& ck, const std::string& blob_name, std::size_t* blob_bytes_out = nullptr) {
  const auto& s = ck.state;
  const auto& spec = s.spec();
  Json m;
  m["format_version"] = kFormatVersion;
  m["arch"] = spec.arch;
  m["input_shape"] = {spec.channels, spec.height, spec.width};
  m["num_classes"] = spec.classes;
  m["blob"] = blob_name;
  Json tensors = Json::array();
  std::size_t offset = 0;
  for (const auto& layer : s.model.layers()) {
    for (const auto* t : {&layer.weight, &layer.bias}) {
      const bool is_weight = t == &layer.weight;
      tensors.push_back({{"name", layer.spec.name + (is_weight ? ".weight" : ".bias")},
                         {"shape", t->shape()},
                         {"dtype", "float32"},
                         {"offset", offset}});
      offset += t->numel() * 4;
    }
  }
  m["blob_bytes"] = offset;
  if (blob_bytes_out) *blob_bytes_out = offset;
  m["tensors"] = std::move(tensors);
  m["quantized"] = s.quantized;
  Json layers = Json::array();
  const auto names = spec.quantized_names();
  for (std::size_t q = 0; q < s.quant.size(); ++q) {
    const auto& lq = s.quant[q];
    layers.push_back({{"name", names[q]},
                      {"bits", lq.bits},
                      {"codebook", to_json(lq.codebook)},
                      {"channel_scale", lq.scale.s},
                      {"act_bits", lq.act.bit_width},
                      {"thresholds", lq.act.thresholds.values()},
                      {"out_scale", lq.act.out_scale.item()}});
  }
  m["quant_layers"] = std::move(layers);
  m["bit_assignment"] = s.quant.empty() ? Json(nullptr) : to_json(s.assignment, names);
  m["sensitivity"] = s.sensitivity ? to_json(*s.sensitivity) : Json(nullptr);
  m["step"] = s.step;
  m["epoch"] = s.epoch;
  m["config"] = ck.config;
  m["metrics"] = ck.metrics;
  return m;
}

inline void save_checkpoint(const std::filesystem::path& base, const Checkpoint& ck) {
  std::string blob;
  for (const auto& layer : ck.state.model.layers()) {
    detail::append_le_floats(blob, layer.weight.data());
    detail::append_le_floats(blob, layer.bias.data());
  }
  const auto manifest = checkpoint_manifest(ck, blob_path(base).filename().string());
  write_file_atomic(blob_path(base), blob);
  write_json_atomic(manifest_path(base), manifest);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& base) {
  if (!std::filesystem::exists(manifest_path(base))) {
    throw MissingArtifactError("checkpoint manifest not found: " + manifest_path(base).string());
  }
  const Json m = read_json_file(manifest_path(base));
  try {
    if (m.at("format_version").get<int>() != kFormatVersion) throw FormatError("unsupported checkpoint format version");
    const auto shape = m.at("input_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw FormatError("checkpoint input_shape must have 3 extents");
    const auto spec = make_model_spec(m.at("arch").get<std::string>(), shape[0], shape[1], shape[2],
                                      m.at("num_classes").get<int>());

    const auto& tensors = m.at("tensors");
    if (tensors.size() != 2 * spec.layers.size()) throw FormatError("checkpoint tensor list does not match architecture");
    std::size_t expected = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& ls = spec.layers[i / 2];
      const bool is_weight = i % 2 == 0;
      const auto name = ls.name + (is_weight ? ".weight" : ".bias");
      const Shape want = is_weight ? ls.weight_shape() : Shape{ls.out};
      if (tensors[i].at("name").get<std::string>() != name || tensors[i].at("shape").get<Shape>() != want ||
          tensors[i].at("dtype").get<std::string>() != "float32" || tensors[i].at("offset").get<std::size_t>() != expected) {
        throw FormatError("checkpoint tensor entry " + std::to_string(i) + " does not match " + name + " " + shape_str(want));
      }
      expected += shape_numel(want) * 4;
    }
    const auto blob_file = manifest_path(base).parent_path() / m.at("blob").get<std::string>();
    if (!std::filesystem::exists(blob_file)) throw MissingArtifactError("checkpoint blob not found: " + blob_file.string());
    const auto blob_size = std::filesystem::file_size(blob_file);
    if (blob_size != expected || m.at("blob_bytes").get<std::size_t>() != expected) {
      throw FormatError("checkpoint blob " + blob_file.string() + " has " + std::to_string(blob_size) +
                        " bytes, manifest requires " + std::to_string(expected));
    }
    const std::string blob = read_file(blob_file);
    std::vector<std::vector<float>> values;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto n = shape_numel(tensors[i].at("shape").get<Shape>());
      values.push_back(detail::read_le_floats(blob, offset, n));
      offset += n * 4;
    }

    Checkpoint ck;
    ck.config = m.at("config");
    ck.metrics = m.at("metrics");
    auto& s = ck.state;
    s.config = config_from_json(ck.config);
    s.model = Model<float>(spec, values);
    s.quantized = m.at("quantized").get<bool>();
    const auto& ql = m.at("quant_layers");
    const auto names = spec.quantized_names();
    if (!ql.empty() && ql.size() != names.size()) throw FormatError("checkpoint quantizer count does not match model");
    for (std::size_t q = 0; q < ql.size(); ++q) {
      const auto& e = ql[q];
      if (e.at("name").get<std::string>() != names[q]) throw FormatError("checkpoint quantizer order mismatch at " + names[q]);
      LayerQuant<float> lq;
      lq.bits = e.at("bits").get<int>();
      lq.codebook = codebook_from_json(e.at("codebook"));
      lq.scale.s = e.at("channel_scale").get<std::vector<float>>();
      if (lq.scale.s.size() != spec.layers[spec.quantized_layers()[q]].out) throw FormatError("channel scale size mismatch");
      auto thr = e.at("thresholds").get<std::vector<float>>();
      const auto n_thr = thr.size();
      lq.act.bit_width = e.at("act_bits").get<int>();
      lq.act.thresholds = Tensor<float>({n_thr}, std::move(thr), true);
      lq.act.out_scale = Tensor<float>({1}, {e.at("out_scale").get<float>()}, true);
      lq.act.validate();
      s.quant.push_back(std::move(lq));
    }
    if (s.quantized && s.quant.empty()) throw FormatError("quantized checkpoint without quantizer state");
    if (!m.at("bit_assignment").is_null()) s.assignment = assignment_from_json(m.at("bit_assignment"));
    if (!m.at("sensitivity").is_null()) s.sensitivity = sensitivity_from_json(m.at("sensitivity"));
    s.step = m.at("step").get<std::size_t>();
    s.epoch = m.at("epoch").get<std::size_t>();
    s.rebuild_optimizer();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + manifest_path(base).string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError("checkpoint " + manifest_path(base).string() + ": " + e.what());
  }
}

}  // namespace qatlab
