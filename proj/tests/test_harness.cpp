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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qatlab/harness.hpp"

using namespace qatlab;

namespace {

struct Quiet {
  ScopedWarningSink sink{[](std::string_view) {}};
};

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.epochs = 1;
  c.batch_size = 32;
  c.n_sens_batches = 2;
  c.calib_batches = 2;
  return c;
}

Dataset blobs(std::size_t n, std::uint64_t stream, std::size_t size = 9) {
  SyntheticOptions o;
  o.samples = n;
  o.image_size = size;
  return synthetic_blobs(o, stream);
}

// Sample k of the fixture is a one-hot image at pixel (label k).
Dataset one_hot_fixture(int classes, std::size_t per_class) {
  Dataset d;
  d.channels = 1;
  d.height = d.width = 3;
  for (std::size_t r = 0; r < per_class; ++r)
    for (int c = 0; c < classes; ++c) {
      std::vector<float> img(9, 0.0f);
      img[static_cast<std::size_t>(c)] = 1.0f;
      d.pixels.insert(d.pixels.end(), img.begin(), img.end());
      d.labels.push_back(c);
    }
  return d;
}

}  // namespace

TEST(ModelSpecs, ShapesAndQuantizedLayers) {
  const auto cnn = make_model_spec("cnn-small", 1, 17, 17, 10);
  ASSERT_EQ(cnn.layers.size(), 7u);
  EXPECT_EQ(cnn.layers.back().in, 64u * 3 * 3);
  EXPECT_EQ(cnn.quantized_names(), (std::vector<std::string>{"conv2", "conv3", "conv4", "conv5", "conv6"}));
  const auto mlp = make_model_spec("mlp-small", 1, 28, 28, 10);
  EXPECT_EQ(mlp.quantized_names(), (std::vector<std::string>{"fc2", "fc3"}));
  EXPECT_THROW(make_model_spec("resnet", 1, 17, 17, 10), ValidationError);
  EXPECT_THROW(make_model_spec("cnn-small", 1, 16, 16, 10), DimensionError);
}

TEST(Evaluate, PerfectClassifierScoresFullMarks) {
  const auto spec = make_model_spec("mlp-small", 1, 3, 3, 4);
  std::vector<std::vector<float>> values;
  for (const auto& l : spec.layers) {
    std::vector<float> w(l.out * l.in, 0.0f);
    for (std::size_t i = 0; i < std::min(l.out, l.in); ++i) w[i * l.in + i] = 1.0f;
    values.push_back(std::move(w));
    values.emplace_back(l.out, 0.0f);
  }
  TrainState s;
  s.model = Model<float>(spec, values);
  EXPECT_EQ(evaluate(s, one_hot_fixture(4, 5)).top1_accuracy, 100.0);
}

TEST(Evaluate, UntrainedModelOnRandomLabelsIsNearChance) {
  auto d = blobs(1000, 0);
  std::mt19937_64 rng(3);
  for (auto& l : d.labels) l = std::uniform_int_distribution<int>(0, 9)(rng);
  const auto s = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), small_config());
  EXPECT_NEAR(evaluate(s, d).top1_accuracy, 10.0, 3.0);
}

TEST(Evaluate, LeavesStateUntouched) {
  Quiet q;
  const auto train = blobs(128, 0), val = blobs(64, 1);
  auto cfg = small_config();
  const auto fp = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg);
  const auto qs = qat_prepare(fp, cfg, train);
  for (const auto* s : {&fp, &qs}) {
    const auto before = s->fingerprint();
    const auto r1 = evaluate(*s, val);
    const auto r2 = evaluate(*s, val);
    EXPECT_EQ(s->fingerprint(), before);
    EXPECT_EQ(r1.top1_accuracy, r2.top1_accuracy);
    EXPECT_EQ(r1.mean_loss, r2.mean_loss);
  }
}

TEST(TrainStep, IdentityModeMatchesPretrainStepBitExactly) {
  Quiet q;
  const auto train = blobs(96, 0);
  auto cfg = small_config();
  const auto spec = make_model_spec("cnn-small", 1, 9, 9, 10);
  auto fp = init_fp_state(spec, cfg);
  auto qat = qat_prepare(fp, cfg, train);
  qat.quantized = false;  // every quantizer bypassed
  qat.rebuild_optimizer();
  fp.total_steps = qat.total_steps = 10;
  for (const auto& idx : make_batches(train.size(), cfg.batch_size)) {
    const auto batch = make_batch<float>(train, idx);
    const auto a = train_step(fp, batch);
    const auto b = train_step(qat, batch);
    EXPECT_EQ(a.total_loss, b.total_loss);
  }
  const auto pa = fp.model.parameters(), pb = qat.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) ASSERT_EQ(pa[i].values(), pb[i].values()) << "parameter " << i;
}

TEST(TrainStep, TotalLossIsTaskPlusCommitWithinOneUlp) {
  Quiet q;
  const auto train = blobs(96, 0);
  auto cfg = small_config();
  auto s = qat_prepare(init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg), cfg, train);
  s.total_steps = 3;
  for (const auto& idx : make_batches(train.size(), cfg.batch_size)) {
    const auto m = train_step(s, make_batch<float>(train, idx));
    ASSERT_EQ(m.layer_commits.size(), 5u);
    float expect = static_cast<float>(m.task_loss);
    for (double c : m.layer_commits) expect += static_cast<float>(c);
    const auto total = static_cast<float>(m.total_loss);
    EXPECT_LE(std::fabs(total - expect), std::nextafter(std::fabs(expect), INFINITY) - std::fabs(expect));
    EXPECT_GT(m.commit_loss, 0.0);
  }
}

TEST(TrainStep, QuantizerStateStaysValid) {
  Quiet q;
  const auto train = blobs(256, 0);
  auto cfg = small_config();
  auto fp = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg);
  run_training(fp, train, train, 2);
  auto s = qat_prepare(fp, cfg, train);
  const auto levels_before = s.quant[0].codebook.levels;
  run_training(s, train, train, 2);
  EXPECT_NE(s.quant[0].codebook.levels, levels_before);  // EMA moved the codebook
  for (const auto& lq : s.quant) {
    EXPECT_NO_THROW(lq.codebook.validate());
    EXPECT_NO_THROW(lq.act.validate());
  }
}

TEST(TrainStep, StaticCodebookWhenLearningOff) {
  Quiet q;
  const auto train = blobs(96, 0);
  auto cfg = small_config();
  cfg.codebook_learning = false;
  auto s = qat_prepare(init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg), cfg, train);
  const auto before = s.quant[2].codebook.levels;
  run_training(s, train, train, 1);
  EXPECT_EQ(s.quant[2].codebook.levels, before);
}

TEST(TrainStep, NonFiniteValueNamesTheLayer) {
  Quiet q;
  const auto train = blobs(32, 0);
  auto cfg = small_config();
  auto s = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg);
  for (auto& w : s.model.layers()[2].weight.data()) w = 3e38f;
  s.total_steps = 1;
  try {
    train_step(s, make_batch<float>(train, make_batches(32, 32)[0]));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.op().rfind("conv3/", 0), 0u) << e.op();
  }
}

TEST(Training, SameSeedSameResult) {
  const auto train = blobs(128, 0), val = blobs(64, 1);
  auto cfg = small_config();
  cfg.epochs = 2;
  const auto spec = make_model_spec("cnn-small", 1, 9, 9, 10);
  std::vector<EpochMetrics> r1, r2;
  const auto a = pretrain(spec, train, val, cfg, &r1);
  const auto b = pretrain(spec, train, val, cfg, &r2);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  ASSERT_EQ(r1.size(), 2u);
  EXPECT_EQ(r1[1].task_loss, r2[1].task_loss);
  cfg.seed = 1;
  EXPECT_NE(pretrain(spec, train, val, cfg).fingerprint(), a.fingerprint());
}

TEST(Training, CosineScheduleEndsAtZeroAndLossFalls) {
  const auto train = blobs(512, 0), val = blobs(128, 1);
  auto cfg = small_config();
  cfg.epochs = 3;
  std::vector<EpochMetrics> rows;
  pretrain(make_model_spec("cnn-small", 1, 9, 9, 10), train, val, cfg, &rows);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows.back().step, 3 * steps_per_epoch(512, 32));
  EXPECT_LT(rows.back().task_loss, rows.front().task_loss);
  EXPECT_LT(rows.back().lr, 0.01 * cfg.lr0);
}

TEST(Sensitivity, ProfilingLeavesModelUnchanged) {
  const auto train = blobs(96, 0);
  auto cfg = small_config();
  const auto fp = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg);
  const auto before = fp.fingerprint();
  const auto p = profile_sensitivity(fp, train, cfg);
  EXPECT_EQ(fp.fingerprint(), before);
  EXPECT_EQ(p.layers, fp.spec().quantized_names());
  EXPECT_EQ(p.n_batches, 2u);
  for (double v : p.scores) EXPECT_GT(v, 0.0);
  for (const auto& t : fp.model.parameters()) EXPECT_FALSE(t.has_grad());
}

TEST(QatPrepare, FixedGivenAndMixedAssignments) {
  Quiet q;
  const auto train = blobs(96, 0);
  auto cfg = small_config();
  const auto fp = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg);

  auto fixed = cfg;
  fixed.precision = "fixed";
  fixed.fixed_bits = 3;
  const auto f = qat_prepare(fp, fixed, train);
  EXPECT_EQ(f.assignment.bits, (std::vector<int>(5, 3)));
  for (const auto& lq : f.quant) {
    EXPECT_EQ(lq.codebook.size(), 7u);
    EXPECT_EQ(lq.act.thresholds.numel(), 7u);
  }
  EXPECT_FALSE(f.sensitivity.has_value());

  auto mixed = cfg;
  mixed.b_avg = 2.8;
  const auto m = qat_prepare(fp, mixed, train);
  EXPECT_EQ(m.assignment.total_bits(), 14);
  ASSERT_TRUE(m.sensitivity.has_value());

  BitAssignment given = fixed_assignment(5, 2);
  given.bits = {2, 3, 4, 3, 2};
  const auto g = qat_prepare(fp, cfg, train, given);
  EXPECT_EQ(g.assignment.bits, given.bits);
  EXPECT_EQ(g.quant[2].codebook.size(), 15u);
  BitAssignment wrong = fixed_assignment(3, 3);
  EXPECT_THROW(qat_prepare(fp, cfg, train, wrong), ValidationError);
}
