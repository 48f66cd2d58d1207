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

// Training, QAT preparation and evaluation.
//
// One QAT step: forward with quantized weights and activations, loss = task
// loss + sum of per-layer commitment losses, backward through the
// straight-through/surrogate rules, SGD step on a cosine schedule, threshold
// projection, then (with codebook learning on) an EMA codebook update from
// the post-step weights.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qatlab/act_quant.hpp"
#include "qatlab/config.hpp"
#include "qatlab/dataset.hpp"
#include "qatlab/model.hpp"
#include "qatlab/ops.hpp"
#include "qatlab/optim.hpp"
#include "qatlab/precision_alloc.hpp"
#include "qatlab/weight_quant.hpp"

namespace qatlab {

struct StepMetrics {
  double task_loss = 0.0;
  double commit_loss = 0.0;  // sum over quantized layers
  double total_loss = 0.0;
  double lr = 0.0;
  std::vector<double> layer_commits;
  std::size_t correct = 0;
  std::size_t count = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double task_loss = 0.0;
  double commit_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct EvalResult {
  double top1_accuracy = 0.0;  // percent
  double mean_loss = 0.0;
};

struct TrainState {
  Model<float> model;
  bool quantized = false;
  std::vector<LayerQuant<float>> quant;  // one per quantized layer
  BitAssignment assignment;
  std::optional<SensitivityProfile> sensitivity;
  ExperimentConfig config;
  Sgd<float> optimizer;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t total_steps = 0;
  std::mt19937_64 shuffle_rng;
  std::mt19937_64 quant_rng;

  const ModelSpec& spec() const { return model.spec(); }

  void rebuild_optimizer() {
    std::vector<Sgd<float>::Group> groups;
    groups.push_back({model.parameters(), {config.momentum, config.weight_decay}});
    if (quantized) {
      std::vector<Tensor<float>> qp;
      for (auto& q : quant) {
        qp.push_back(q.act.thresholds);
        qp.push_back(q.act.out_scale);
      }
      groups.push_back({std::move(qp), {config.momentum, 0.0}});
    }
    optimizer = Sgd<float>(std::move(groups));
  }

  // Hash of every trainable value and quantizer statistic.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& p : model.parameters()) h.update_values(p.data().data(), p.numel());
    for (const auto& q : quant) {
      h.update_values(&q.bits, 1);
      h.update_values(q.scale.s.data(), q.scale.s.size());
      h.update_values(q.codebook.levels.data(), q.codebook.levels.size());
      h.update_values(q.codebook.ema_counts.data(), q.codebook.ema_counts.size());
      h.update_values(q.codebook.ema_sums.data(), q.codebook.ema_sums.size());
      h.update_values(q.act.thresholds.data().data(), q.act.thresholds.numel());
      h.update_values(q.act.out_scale.data().data(), 1);
    }
    return h.digest();
  }
};

namespace detail {

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

}  // namespace detail

// Fresh full-precision state: He-initialized model from the config seed.
inline TrainState init_fp_state(const ModelSpec& spec, const ExperimentConfig& cfg) {
  TrainState s;
  std::mt19937_64 init_rng(detail::stream_seed(cfg.seed, 1));
  s.model = Model<float>(spec, init_rng);
  s.config = cfg;
  s.shuffle_rng.seed(detail::stream_seed(cfg.seed, 2));
  s.quant_rng.seed(detail::stream_seed(cfg.seed, 3));
  s.rebuild_optimizer();
  return s;
}

inline std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
  return (samples + batch_size - 1) / batch_size;
}

// Index batches covering [0, n) in order, or shuffled when rng is given.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          std::mt19937_64* rng = nullptr) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

inline ForwardOptions train_forward_options(const TrainState& s) {
  return ForwardOptions{s.quantized, s.quantized, s.config.beta};
}

// Recomputes assignments from the current weights and moves the codebooks.
inline void update_codebooks(TrainState& s) {
  const auto qlayers = s.spec().quantized_layers();
  for (std::size_t q = 0; q < qlayers.size(); ++q) {
    auto& lq = s.quant[q];
    const auto& w = s.model.layers()[qlayers[q]].weight;
    Tensor<float> w_norm;
    {
      NoGradGuard ng;
      w_norm = normalize_weights(w, lq.scale);
    }
    const auto a = assign_nearest(w_norm, lq.codebook);
    ema_update<float>(lq.codebook, w_norm.data(), a.indices, s.quant_rng);
  }
}

inline StepMetrics train_step(TrainState& s, const Batch<float>& batch) {
  StepMetrics m;
  m.lr = cosine_lr(s.step, s.total_steps, s.config.lr0);
  auto out = forward(s.model, batch.images, &s.quant, train_forward_options(s));
  Tensor<float> task = softmax_cross_entropy(out.logits, std::span<const int>(batch.labels));
  Tensor<float> total = task;
  for (const auto& c : out.commits) {
    total = add(total, c);
    m.layer_commits.push_back(c.item());
    m.commit_loss += c.item();
  }
  m.task_loss = task.item();
  m.total_loss = total.item();
  const auto pred = argmax_rows(out.logits);
  for (std::size_t i = 0; i < pred.size(); ++i) m.correct += pred[i] == batch.labels[i];
  m.count = pred.size();

  total.backward();
  s.optimizer.step(m.lr);
  if (s.quantized) {
    for (auto& q : s.quant) q.act.project();
    if (s.config.codebook_learning) update_codebooks(s);
  }
  ++s.step;
  return m;
}

// Inference pass; never modifies the state.
inline EvalResult evaluate(const TrainState& s, const Dataset& data, std::size_t batch_size = 256) {
  EvalResult r;
  if (data.size() == 0) return r;
  NoGradGuard ng;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (const auto& idx : make_batches(data.size(), batch_size)) {
    const auto batch = make_batch<float>(data, idx);
    auto out = forward(s.model, batch.images, &s.quant, ForwardOptions{s.quantized, false, s.config.beta});
    const auto loss = softmax_cross_entropy(out.logits, std::span<const int>(batch.labels));
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    const auto pred = argmax_rows(out.logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
  }
  r.top1_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
  r.mean_loss = loss_sum / static_cast<double>(data.size());
  return r;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Runs `epochs` epochs on a cosine schedule that starts at step 0.
inline std::vector<EpochMetrics> run_training(TrainState& s, const Dataset& train, const Dataset& val,
                                              std::size_t epochs, const EpochCallback& on_epoch = {}) {
  s.step = 0;
  s.epoch = 0;
  s.total_steps = epochs * steps_per_epoch(train.size(), s.config.batch_size);
  std::vector<EpochMetrics> rows;
  for (std::size_t e = 0; e < epochs; ++e) {
    double task = 0.0, commit = 0.0, lr = 0.0;
    std::size_t correct = 0, count = 0, steps = 0;
    for (const auto& idx : make_batches(train.size(), s.config.batch_size, &s.shuffle_rng)) {
      const auto m = train_step(s, make_batch<float>(train, idx));
      task += m.task_loss;
      commit += m.commit_loss;
      lr = m.lr;
      correct += m.correct;
      count += m.count;
      ++steps;
    }
    ++s.epoch;
    EpochMetrics row;
    row.epoch = s.epoch;
    row.step = s.step;
    row.lr = lr;
    row.task_loss = steps ? task / static_cast<double>(steps) : 0.0;
    row.commit_loss = steps ? commit / static_cast<double>(steps) : 0.0;
    row.train_acc = count ? 100.0 * static_cast<double>(correct) / static_cast<double>(count) : 0.0;
    row.val_acc = evaluate(s, val).top1_accuracy;
    rows.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return rows;
}

inline TrainState pretrain(const ModelSpec& spec, const Dataset& train, const Dataset& val, const ExperimentConfig& cfg,
                           std::vector<EpochMetrics>* rows = nullptr, const EpochCallback& on_epoch = {}) {
  TrainState s = init_fp_state(spec, cfg);
  auto r = run_training(s, train, val, cfg.epochs, on_epoch);
  if (rows) *rows = std::move(r);
  return s;
}

// Squared-gradient sensitivity of every quantized layer, measured on the
// full-precision model over the first n_sens_batches training batches.
inline SensitivityProfile profile_sensitivity(const TrainState& fp, const Dataset& train, const ExperimentConfig& cfg) {
  const auto batches = make_batches(train.size(), cfg.batch_size);
  const auto qlayers = fp.spec().quantized_layers();
  std::vector<Tensor<float>> weights;
  for (auto i : qlayers) weights.push_back(fp.model.layers()[i].weight);
  auto profile = score_sensitivity<float>(
      weights, fp.spec().quantized_names(), cfg.n_sens_batches, batches.size(), [&](std::size_t b) {
        const auto batch = make_batch<float>(train, batches[b]);
        auto out = forward(fp.model, batch.images, static_cast<const std::vector<LayerQuant<float>>*>(nullptr),
                           ForwardOptions{});
        return softmax_cross_entropy(out.logits, std::span<const int>(batch.labels));
      });
  for (auto& p : fp.model.parameters()) p.zero_grad();
  return profile;
}

inline BitAssignment allocate_bits(const SensitivityProfile& profile, const ExperimentConfig& cfg) {
  const double b_total = static_cast<double>(profile.scores.size()) * cfg.b_avg;
  const auto b_prime = allocate_continuous(profile.scores, b_total);
  return discretize_greedy(b_prime, cfg.b_set, cfg.b_avg);
}

inline Codebook make_codebook(const ExperimentConfig& cfg, std::span<const float> w_norm, int bits,
                              std::mt19937_64& rng) {
  const CodebookOptions opt{cfg.ema_alpha, cfg.ema_epsilon};
  if (cfg.codebook_init == "quantile") return init_codebook_quantile<float>(w_norm, bits, opt);
  if (cfg.codebook_init == "random-normal") return init_codebook_random_normal(bits, rng, opt);
  return init_codebook_uniform(bits, opt);
}

// Builds a quantized training state from a trained full-precision one:
// bit assignment (fixed, given, or profiled and allocated), per-channel
// scales, codebooks and calibrated activation thresholds.
inline TrainState qat_prepare(const TrainState& fp, const ExperimentConfig& cfg, const Dataset& train,
                              const std::optional<BitAssignment>& given = std::nullopt) {
  TrainState s;
  s.model = fp.model.clone();
  s.config = cfg;
  s.shuffle_rng.seed(detail::stream_seed(cfg.seed, 2));
  s.quant_rng.seed(detail::stream_seed(cfg.seed, 3));
  const auto qlayers = s.spec().quantized_layers();
  const std::size_t L = qlayers.size();

  if (cfg.precision == "fixed") {
    s.assignment = fixed_assignment(L, cfg.fixed_bits);
  } else if (given) {
    if (given->bits.size() != L) {
      throw ValidationError("bit assignment has " + std::to_string(given->bits.size()) + " layers, model has " +
                            std::to_string(L));
    }
    s.assignment = *given;
  } else {
    s.sensitivity = profile_sensitivity(fp, train, cfg);
    s.assignment = allocate_bits(*s.sensitivity, cfg);
  }

  s.quant.resize(L);
  for (std::size_t q = 0; q < L; ++q) {
    auto& lq = s.quant[q];
    lq.bits = s.assignment.bits[q];
    const auto& w = s.model.layers()[qlayers[q]].weight;
    lq.scale = compute_channel_scale(w);
    NoGradGuard ng;
    const auto w_norm = normalize_weights(w, lq.scale);
    lq.codebook = make_codebook(cfg, w_norm.data(), lq.bits, s.quant_rng);
  }

  // Calibrate thresholds from the FP activations entering each quantized layer.
  std::vector<std::vector<float>> captured(L);
  {
    NoGradGuard ng;
    const auto batches = make_batches(train.size(), cfg.batch_size);
    const std::size_t n = std::min(cfg.calib_batches, batches.size());
    for (std::size_t b = 0; b < n; ++b) {
      const auto batch = make_batch<float>(train, batches[b]);
      forward(s.model, batch.images, static_cast<const std::vector<LayerQuant<float>>*>(nullptr), ForwardOptions{},
              ActivationCapture<float>([&](std::size_t q, const Tensor<float>& act) {
                captured[q].insert(captured[q].end(), act.data().begin(), act.data().end());
              }));
    }
  }
  for (std::size_t q = 0; q < L; ++q) s.quant[q].act = init_thresholds<float>(captured[q], s.quant[q].bits);

  s.quantized = true;
  s.rebuild_optimizer();
  return s;
}

}  // namespace qatlab
