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

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "qatlab/tensor.hpp"

namespace qatlab {

// Cosine annealing from lr0 to zero; steps past the end clamp to zero.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (step >= total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Classical momentum SGD:
//   v <- momentum * v + (g + weight_decay * p)
//   p <- p - lr * v
// Gradients are cleared after each step.
template <class T>
class Sgd {
 public:
  struct Group {
    std::vector<Tensor<T>> params;
    SgdOptions options;
  };

  Sgd() = default;
  explicit Sgd(std::vector<Group> groups) : groups_(std::move(groups)) {
    for (const auto& g : groups_) {
      auto& vs = velocity_.emplace_back();
      for (const auto& p : g.params) vs.emplace_back(p.numel(), T(0));
    }
  }

  void step(double lr) {
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      auto& group = groups_[gi];
      for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
        if (!group.params[pi].has_grad()) {
          throw StateError("sgd_step: parameter " + std::to_string(pi) + " of group " +
                           std::to_string(gi) + " has no gradient");
        }
      }
    }
    const T lr_t = static_cast<T>(lr);
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
      auto& group = groups_[gi];
      const T mu = static_cast<T>(group.options.momentum);
      const T wd = static_cast<T>(group.options.weight_decay);
      for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
        auto& p = group.params[pi];
        auto data = p.data();
        auto grad = p.grad();
        auto& v = velocity_[gi][pi];
        for (std::size_t i = 0; i < data.size(); ++i) {
          v[i] = mu * v[i] + (grad[i] + wd * data[i]);
          data[i] -= lr_t * v[i];
        }
        check_finite<T>(data, "sgd_step", "parameter");
        p.zero_grad();
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

  const std::vector<Group>& groups() const { return groups_; }

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<std::vector<T>>> velocity_;
};

}  // namespace qatlab
