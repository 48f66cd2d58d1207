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

// Library walk-through: pretrain a small MLP on synthetic blobs, then run
// mixed-precision QAT at 3 bits on average and compare accuracies.

#include <cstdio>

#include "qatlab/harness.hpp"

int main() {
  using namespace qatlab;
  SyntheticOptions opt;
  opt.image_size = 9;
  opt.samples = 2000;
  const Dataset train = synthetic_blobs(opt, 0);
  opt.samples = 500;
  const Dataset val = synthetic_blobs(opt, 1);

  ExperimentConfig cfg;
  cfg.arch = "mlp-small";
  cfg.epochs = 5;
  const auto spec = make_model_spec(cfg.arch, 1, 9, 9, 10);

  const TrainState fp = pretrain(spec, train, val, cfg);
  std::printf("full precision: %.2f%%\n", evaluate(fp, val).top1_accuracy);

  TrainState q = qat_prepare(fp, cfg, train);
  for (std::size_t l = 0; l < q.assignment.bits.size(); ++l)
    std::printf("  %s: %d bits\n", spec.quantized_names()[l].c_str(), q.assignment.bits[l]);
  run_training(q, train, val, cfg.epochs);
  std::printf("quantized: %.2f%%\n", evaluate(q, val).top1_accuracy);
}
