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

// Threshold-based activation quantizer with uniform output levels.
//
// Forward: level(x) = number of thresholds T_k <= x, in {0, ..., 2^n - 1};
// output = a * level(x).
//
// Backward uses the piecewise-linear surrogate
//   f(x) = 0                                   x < T_1
//   f(x) = (k - 1) + (x - T_k) / (T_{k+1} - T_k)  T_k <= x < T_{k+1}
//   f(x) = 2^n - 1                             x >= T_{2^n - 1}
// with output surrogate a * f(x), giving gradients to x, the thresholds and a.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qatlab/ops.hpp"
#include "qatlab/tensor.hpp"

namespace qatlab {

template <class T>
struct ActQuantizer {
  int bit_width = 0;
  Tensor<T> thresholds;  // [2^n - 1], ascending, learnable
  Tensor<T> out_scale;   // [1], positive, learnable

  std::size_t max_level() const { return (std::size_t{1} << bit_width) - 1; }

  void validate() const {
    if (bit_width < 1 || bit_width > 8) throw ValidationError("activation bit-width outside [1, 8]");
    if (thresholds.numel() != max_level()) {
      throw ValidationError("activation quantizer needs 2^n-1 = " + std::to_string(max_level()) + " thresholds");
    }
    for (std::size_t i = 1; i < thresholds.numel(); ++i)
      if (!(thresholds[i] > thresholds[i - 1])) throw ValidationError("activation thresholds must be strictly ascending");
    if (!(out_scale.item() > T(0))) throw ValidationError("activation out_scale must be positive");
  }

  // Restores strict ordering with a minimum gap of 1e-4 of the threshold span
  // and keeps the output scale positive. Run after every optimizer step.
  void project() {
    auto t = thresholds.data();
    std::sort(t.begin(), t.end());
    const T span_width = t.back() - t.front();
    const T gap = span_width > T(0) ? T(1e-4) * span_width : T(1e-4);
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = std::max(t[i], t[i - 1] + gap);
    auto a = out_scale.data();
    a[0] = std::max(a[0], T(1e-6));
  }
};

// Integer level of x: count of thresholds <= x.
template <class T>
std::size_t act_level(T x, std::span<const T> thresholds) {
  return static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), x) - thresholds.begin());
}

template <class T>
Tensor<T> act_forward(const Tensor<T>& x, const ActQuantizer<T>& q) {
  const auto thr = q.thresholds.data();
  const T a = q.out_scale.item();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * static_cast<T>(act_level<T>(x[i], thr));

  return make_result<T>(
      "act_quant", x.shape(), std::move(out), {x, q.thresholds, q.out_scale}, [](detail::Node<T>& node) {
        const auto& xv = node.parents[0]->data;
        const auto& tv = node.parents[1]->data;
        const T av = node.parents[2]->data[0];
        const std::size_t kmax = tv.size();
        T* gx = detail::parent_grad(node, 0);
        T* gt = detail::parent_grad(node, 1);
        T* ga = detail::parent_grad(node, 2);
        T ga_acc = T(0);
        for (std::size_t i = 0; i < xv.size(); ++i) {
          const T g = node.grad[i];
          const std::size_t k = act_level<T>(xv[i], tv);
          if (k == 0) continue;  // f = 0, all partials zero
          if (k == kmax) {
            ga_acc += g * static_cast<T>(kmax);
            continue;
          }
          const T lo = tv[k - 1];
          const T width = tv[k] - lo;
          const T u = xv[i] - lo;
          const T f = static_cast<T>(k - 1) + u / width;
          ga_acc += g * f;
          if (gx) gx[i] += av * g / width;
          if (gt) {
            const T w2 = width * width;
            gt[k - 1] += av * g * (u - width) / w2;
            gt[k] -= av * g * u / w2;
          }
        }
        if (ga) ga[0] += ga_acc;
      });
}

// Percentile (0-100) with linear interpolation between order statistics.
template <class T>
T percentile(std::span<const T> values, double pct) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  std::vector<T> v(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const T lo_v = v[lo];
  if (lo + 1 >= v.size()) return lo_v;
  const T hi_v = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return lo_v + static_cast<T>(pos - static_cast<double>(lo)) * (hi_v - lo_v);
}

// Thresholds evenly spaced on (0, p) where p is the 99.9th percentile of the
// calibration activations; out_scale = p / (2^n - 1).
template <class T>
ActQuantizer<T> init_thresholds(std::span<const T> calib, int bits) {
  if (bits < 1 || bits > 8) throw ValidationError("activation bit-width outside [1, 8]");
  T p = calib.empty() ? T(0) : percentile(calib, 99.9);
  if (!(p > T(0))) {
    warn("activation calibration is all-zero; spreading thresholds on [0, 1]");
    p = T(1);
  }
  const std::size_t kmax = (std::size_t{1} << bits) - 1;
  const auto steps = static_cast<T>(kmax + 1);
  std::vector<T> t(kmax);
  for (std::size_t k = 0; k < kmax; ++k) t[k] = p * static_cast<T>(k + 1) / steps;
  ActQuantizer<T> q;
  q.bit_width = bits;
  q.thresholds = Tensor<T>({kmax}, std::move(t), true);
  q.out_scale = Tensor<T>({1}, {p / static_cast<T>(kmax)}, true);
  return q;
}

}  // namespace qatlab
