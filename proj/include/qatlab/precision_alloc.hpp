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

// Sensitivity-driven mixed-precision allocation.
//
//   sigma_l = sum over batches of ||dL/dw_l||^2
//   b'_l    = B_total * log(1 + sigma_l) / sum_k log(1 + sigma_k)
//
// followed by greedy discretization onto the allowed bit set: floor every
// layer, then upgrade the layers with the largest fractional remainders one
// step each until the budget is spent.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qatlab/tensor.hpp"

namespace qatlab {

struct SensitivityProfile {
  std::vector<std::string> layers;
  std::vector<double> scores;
  std::size_t n_batches = 0;
};

// Accumulates squared gradient norms of `weights` over up to `requested`
// batches. `loss_fn(b)` builds the loss for batch b (b < available). Weight
// values are never modified; their grads are cleared before and after.
template <class T, class LossFn>
SensitivityProfile score_sensitivity(std::vector<Tensor<T>> weights, std::vector<std::string> names,
                                     std::size_t requested, std::size_t available, LossFn&& loss_fn) {
  if (requested < 1) throw ValidationError("sensitivity needs n_batches >= 1");
  if (names.size() != weights.size()) throw ValidationError("sensitivity: one name per weight tensor required");
  const std::size_t used = std::min(requested, available);
  if (used < requested) {
    warn("sensitivity: only " + std::to_string(used) + " of " + std::to_string(requested) +
         " requested batches available");
  }
  SensitivityProfile profile;
  profile.layers = std::move(names);
  profile.scores.assign(weights.size(), 0.0);
  profile.n_batches = used;
  for (std::size_t b = 0; b < used; ++b) {
    for (auto& w : weights) w.zero_grad();
    Tensor<T> loss = loss_fn(b);
    loss.backward();
    for (std::size_t l = 0; l < weights.size(); ++l) {
      double acc = 0.0;
      for (T g : weights[l].grad()) acc += static_cast<double>(g) * static_cast<double>(g);
      profile.scores[l] += acc;
    }
  }
  for (auto& w : weights) w.zero_grad();
  return profile;
}

// Continuous bits proportional to log(1 + sigma); uniform when every score
// is zero.
inline std::vector<double> allocate_continuous(std::span<const double> scores, double b_total) {
  if (scores.empty()) throw ValidationError("allocate_continuous: no layers");
  for (double s : scores)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("sensitivity scores must be finite and nonnegative");
  std::vector<double> logs(scores.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    logs[i] = std::log1p(scores[i]);
    denom += logs[i];
  }
  std::vector<double> out(scores.size());
  if (!(denom > 0.0)) {
    warn("allocate_continuous: all sensitivities are zero; allocating uniformly");
    std::fill(out.begin(), out.end(), b_total / static_cast<double>(scores.size()));
    return out;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = b_total * logs[i] / denom;
  return out;
}

struct BitAssignment {
  std::vector<int> bits;
  std::vector<int> b_set{2, 3, 4};
  double b_avg = 3.0;
  std::vector<double> b_prime;  // continuous bits before discretization
  double b_total = 0.0;         // L * b_avg
  long target_total = 0;        // round(L * b_avg)
  // target_total - sum(bits); nonzero means the budget could not be met.
  long budget_gap = 0;
  // Upgrade (positive) or downgrade (negative) steps that found no eligible layer.
  long unfulfilled_steps = 0;
  std::vector<std::size_t> upgrade_order;
  std::vector<std::size_t> downgrade_order;

  long total_bits() const {
    long s = 0;
    for (int b : bits) s += b;
    return s;
  }
  double average_bits() const { return bits.empty() ? 0.0 : static_cast<double>(total_bits()) / static_cast<double>(bits.size()); }
};

inline void validate_bit_set(std::span<const int> b_set) {
  if (b_set.empty()) throw ValidationError("bit set must be non-empty");
  for (std::size_t i = 0; i < b_set.size(); ++i) {
    if (b_set[i] < 2 || b_set[i] > 8) throw ValidationError("bit set members must lie in [2, 8]");
    if (i > 0 && b_set[i] <= b_set[i - 1]) throw ValidationError("bit set must be sorted ascending without repeats");
  }
}

// Greedy discretization of continuous bits onto `b_set` under the budget
// L * b_avg. Ties in the priority argmax go to the lowest layer index.
inline BitAssignment discretize_greedy(std::span<const double> b_prime, std::span<const int> b_set, double b_avg) {
  validate_bit_set(b_set);
  if (b_prime.empty()) throw ValidationError("discretize_greedy: no layers");
  const int bmin = b_set.front(), bmax = b_set.back();
  if (!(b_avg >= bmin && b_avg <= bmax)) {
    throw ValidationError("b_avg " + std::to_string(b_avg) + " outside bit set range [" + std::to_string(bmin) +
                          ", " + std::to_string(bmax) + "]");
  }
  for (double v : b_prime)
    if (!std::isfinite(v)) throw ValidationError("continuous bit-widths must be finite");

  const std::size_t L = b_prime.size();
  BitAssignment out;
  out.b_set.assign(b_set.begin(), b_set.end());
  out.b_avg = b_avg;
  out.b_prime.assign(b_prime.begin(), b_prime.end());
  out.b_total = static_cast<double>(L) * b_avg;
  out.target_total = std::lround(out.b_total);

  auto pos_of = [&](int b) {
    return static_cast<std::size_t>(std::find(b_set.begin(), b_set.end(), b) - b_set.begin());
  };

  out.bits.resize(L);
  double floor_sum = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    int chosen = bmin;  // clamp when b'_l < min(B_set)
    for (int b : b_set)
      if (static_cast<double>(b) <= b_prime[l]) chosen = b;
    out.bits[l] = chosen;
    floor_sum += chosen;
  }
  const long remaining = std::lround(out.b_total - floor_sum);

  std::vector<double> priority(L);
  for (std::size_t l = 0; l < L; ++l) priority[l] = b_prime[l] - static_cast<double>(out.bits[l]);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (remaining > 0) {
    for (long i = 0; i < remaining; ++i) {
      std::size_t best = L;
      for (std::size_t l = 0; l < L; ++l) {
        if (out.bits[l] >= bmax || priority[l] == -kInf) continue;
        if (best == L || priority[l] > priority[best]) best = l;
      }
      if (best == L) {
        out.unfulfilled_steps = remaining - i;
        break;
      }
      out.bits[best] = b_set[pos_of(out.bits[best]) + 1];
      priority[best] = -kInf;
      out.upgrade_order.push_back(best);
    }
  } else if (remaining < 0) {
    for (long i = 0; i < -remaining; ++i) {
      std::size_t best = L;
      for (std::size_t l = 0; l < L; ++l) {
        if (out.bits[l] <= bmin || priority[l] == kInf) continue;
        if (best == L || priority[l] < priority[best]) best = l;
      }
      if (best == L) {
        out.unfulfilled_steps = remaining + i;
        break;
      }
      out.bits[best] = b_set[pos_of(out.bits[best]) - 1];
      priority[best] = kInf;
      out.downgrade_order.push_back(best);
    }
  }
  out.budget_gap = out.target_total - out.total_bits();
  if (out.budget_gap != 0) {
    warn("bit allocation misses the budget by " + std::to_string(out.budget_gap) + " bits (" +
         std::to_string(out.unfulfilled_steps) + " unfulfilled steps)");
  }
  return out;
}

// Uniform assignment for fixed-precision runs.
inline BitAssignment fixed_assignment(std::size_t layers, int bits) {
  BitAssignment out;
  out.bits.assign(layers, bits);
  out.b_set = {bits};
  out.b_avg = bits;
  out.b_prime.assign(layers, static_cast<double>(bits));
  out.b_total = static_cast<double>(layers) * bits;
  out.target_total = std::lround(out.b_total);
  return out;
}

}  // namespace qatlab
