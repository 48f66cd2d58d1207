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

// Per-layer weight codebooks.
//
// Weights are normalized by a per-output-channel scale s into [-1, 1]. A
// codebook of 2^b - 1 levels (symmetric in count around an exact zero level)
// is initialized from the quantiles of the normalized weights, each weight
// snaps to its nearest level, the reconstruction passes gradients straight
// through to the normalized weights, and the levels track the weight clusters
// with EMA statistics instead of backprop.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qatlab/ops.hpp"
#include "qatlab/tensor.hpp"

namespace qatlab {

inline constexpr int kMinCodebookBits = 2;
inline constexpr int kMaxCodebookBits = 8;

inline std::size_t codebook_size(int bits) {
  if (bits < kMinCodebookBits || bits > kMaxCodebookBits) {
    throw ValidationError("codebook bit-width " + std::to_string(bits) + " outside [" +
                          std::to_string(kMinCodebookBits) + ", " + std::to_string(kMaxCodebookBits) + "]");
  }
  return (std::size_t{1} << bits) - 1;
}

struct CodebookOptions {
  double alpha = 0.99;
  double epsilon = 1e-5;
  // Entries whose EMA count falls below this are reseeded.
  double dead_floor = 1e-3;
};

struct Codebook {
  int bit_width = 0;
  std::vector<double> levels;
  std::vector<double> ema_counts;
  std::vector<double> ema_sums;
  double alpha = 0.99;
  double epsilon = 1e-5;

  std::size_t size() const noexcept { return levels.size(); }

  // Position of the pinned zero level.
  std::size_t zero_index() const {
    auto it = std::find(levels.begin(), levels.end(), 0.0);
    if (it == levels.end()) throw StateError("codebook has no zero level");
    return static_cast<std::size_t>(it - levels.begin());
  }

  // Throws ValidationError describing the first broken invariant.
  void validate() const {
    const auto n = codebook_size(bit_width);
    if (levels.size() != n || ema_counts.size() != n || ema_sums.size() != n) {
      throw ValidationError("codebook arrays must have 2^b-1 = " + std::to_string(n) + " entries");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("codebook alpha must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("codebook epsilon must be positive");
    for (double c : ema_counts)
      if (!(c >= 0.0)) throw ValidationError("codebook EMA counts must be nonnegative");
    const bool all_zero = std::all_of(levels.begin(), levels.end(), [](double v) { return v == 0.0; });
    if (all_zero) return;  // degenerate fallback codebook
    for (std::size_t i = 1; i < n; ++i)
      if (!(levels[i] > levels[i - 1])) throw ValidationError("codebook levels must be strictly ascending");
    const auto half = n / 2;
    if (levels[half] != 0.0) throw ValidationError("codebook must have exactly one zero level in the middle");
  }
};

namespace detail {

// Forces strict ascent by nudging ties upward; keeps an exact zero in place.
inline void make_strictly_ascending(std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] <= v[i - 1]) v[i] = std::nextafter(v[i - 1], std::numeric_limits<double>::infinity());
}

inline Codebook codebook_from_levels(int bits, std::vector<double> levels, const CodebookOptions& opt) {
  Codebook cb;
  cb.bit_width = bits;
  cb.levels = std::move(levels);
  cb.ema_counts.assign(cb.levels.size(), 1.0);
  cb.ema_sums.resize(cb.levels.size());
  for (std::size_t i = 0; i < cb.levels.size(); ++i) cb.ema_sums[i] = cb.ema_counts[i] * cb.levels[i];
  cb.alpha = opt.alpha;
  cb.epsilon = opt.epsilon;
  return cb;
}

inline std::vector<double> symmetric_levels(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> levels;
  levels.reserve(pos.size() + neg.size() + 1);
  for (double q : neg) levels.push_back(-q);
  levels.push_back(0.0);
  for (double q : pos) levels.push_back(q);
  std::sort(levels.begin(), levels.end());
  return levels;
}

}  // namespace detail

// Quantile of ascending `sorted` at probability p, linearly interpolating
// between order statistics (position p * (n - 1)).
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of an empty set");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile probability outside [0, 1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

template <class T>
struct ChannelScale {
  std::vector<T> s;

  std::size_t channels() const noexcept { return s.size(); }
};

// s_c = max |w| over output channel c; all-zero channels get s_c = 1.
template <class T>
ChannelScale<T> compute_channel_scale(const Tensor<T>& w) {
  const std::size_t channels = w.dim(0);
  const std::size_t inner = w.numel() / channels;
  ChannelScale<T> out;
  out.s.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    T m = T(0);
    for (std::size_t i = 0; i < inner; ++i) m = std::max(m, std::abs(w[c * inner + i]));
    out.s[c] = m > T(0) ? m : T(1);
  }
  return out;
}

// w' = w / s along the output-channel dim.
template <class T>
Tensor<T> normalize_weights(const Tensor<T>& w, const ChannelScale<T>& scale) {
  return divide_rows(w, std::span<const T>(scale.s));
}

// Quantile-based initialization: the interior points of an evenly spaced grid
// of N_pos + 2 probabilities, applied separately to |w| of the positive and
// the negative weights, combined with zero.
template <class T>
Codebook init_codebook_quantile(std::span<const T> w_norm, int bits, const CodebookOptions& opt = {}) {
  const std::size_t n = codebook_size(bits);
  const std::size_t n_side = (n - 1) / 2;
  std::vector<double> pos, neg;
  for (T v : w_norm) {
    if (v > T(0)) pos.push_back(static_cast<double>(v));
    else if (v < T(0)) neg.push_back(-static_cast<double>(v));
  }
  if (pos.empty() && neg.empty()) {
    warn("codebook init: no nonzero weights; using an all-zero codebook");
    return detail::codebook_from_levels(bits, std::vector<double>(n, 0.0), opt);
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> probs(n_side);
  for (std::size_t i = 0; i < n_side; ++i)
    probs[i] = static_cast<double>(i + 1) / static_cast<double>(n_side + 1);

  auto side_quantiles = [&](const std::vector<double>& sorted) {
    std::vector<double> q(n_side);
    for (std::size_t i = 0; i < n_side; ++i) q[i] = quantile_sorted(sorted, probs[i]);
    return q;
  };
  std::vector<double> q_pos, q_neg;
  if (!pos.empty()) q_pos = side_quantiles(pos);
  if (!neg.empty()) q_neg = side_quantiles(neg);
  if (pos.empty()) {
    warn("codebook init: no positive weights; mirroring negative quantiles");
    q_pos = q_neg;
  }
  if (neg.empty()) {
    warn("codebook init: no negative weights; mirroring positive quantiles");
    q_neg = q_pos;
  }
  auto levels = detail::symmetric_levels(q_pos, q_neg);
  // Strictness within each side; the zero level stays exact.
  const std::size_t z = n_side;
  std::vector<double> upper(levels.begin() + static_cast<std::ptrdiff_t>(z), levels.end());
  detail::make_strictly_ascending(upper);
  std::copy(upper.begin(), upper.end(), levels.begin() + static_cast<std::ptrdiff_t>(z));
  for (std::size_t i = z; i-- > 0;)
    if (levels[i] >= levels[i + 1]) levels[i] = std::nextafter(levels[i + 1], -std::numeric_limits<double>::infinity());
  return detail::codebook_from_levels(bits, std::move(levels), opt);
}

// Levels drawn from N(0, 1): |draws| on each side of zero.
template <class Rng>
Codebook init_codebook_random_normal(int bits, Rng& rng, const CodebookOptions& opt = {}) {
  const std::size_t n_side = (codebook_size(bits) - 1) / 2;
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> pos(n_side), neg(n_side);
  for (auto& v : pos) v = std::abs(dist(rng));
  for (auto& v : neg) v = std::abs(dist(rng));
  auto levels = detail::symmetric_levels(pos, neg);
  detail::make_strictly_ascending(levels);
  return detail::codebook_from_levels(bits, std::move(levels), opt);
}

// Evenly spaced levels k / N_pos, k = -N_pos..N_pos, on [-1, 1].
inline Codebook init_codebook_uniform(int bits, const CodebookOptions& opt = {}) {
  const std::size_t n = codebook_size(bits);
  const auto n_side = static_cast<double>((n - 1) / 2);
  std::vector<double> levels(n);
  for (std::size_t i = 0; i < n; ++i) levels[i] = (static_cast<double>(i) - n_side) / n_side;
  return detail::codebook_from_levels(bits, std::move(levels), opt);
}

// Nearest level by squared distance; ties go to the smaller level.
// Binary search finds the bracketing pair, then the exact squared-distance
// comparison decides, so the result agrees with a full argmin scan.
template <class T>
std::int32_t nearest_index(T x, std::span<const T> levels) {
  const auto it = std::upper_bound(levels.begin(), levels.end(), x);
  auto hi = static_cast<std::size_t>(it - levels.begin());
  if (hi == 0) return 0;
  std::size_t best = hi - 1;
  if (hi < levels.size()) {
    const T dl = (x - levels[hi - 1]) * (x - levels[hi - 1]);
    const T du = (x - levels[hi]) * (x - levels[hi]);
    if (du < dl) best = hi;
  }
  while (best > 0) {
    const T d = (x - levels[best]) * (x - levels[best]);
    const T dp = (x - levels[best - 1]) * (x - levels[best - 1]);
    if (dp <= d) --best;
    else break;
  }
  return static_cast<std::int32_t>(best);
}

template <class T>
struct Assignment {
  std::vector<std::int32_t> indices;
  Tensor<T> quantized;  // same shape as the input, no graph
};

template <class T>
std::vector<T> levels_as(const Codebook& cb) {
  return std::vector<T>(cb.levels.begin(), cb.levels.end());
}

template <class T>
Assignment<T> assign_nearest(const Tensor<T>& w_norm, const Codebook& cb) {
  if (cb.levels.empty()) throw ValidationError("assign_nearest: empty codebook");
  const auto levels = levels_as<T>(cb);
  Assignment<T> out;
  out.indices.resize(w_norm.numel());
  std::vector<T> q(w_norm.numel());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto idx = nearest_index<T>(w_norm[i], levels);
    out.indices[i] = idx;
    q[i] = levels[static_cast<std::size_t>(idx)];
  }
  out.quantized = Tensor<T>(w_norm.shape(), std::move(q));
  return out;
}

// beta * mean((sg(w_hat) - w)^2); only w receives a gradient.
template <class T>
Tensor<T> commitment_loss(const Tensor<T>& w_norm, const Tensor<T>& w_hat, double beta) {
  if (beta < 0.0) throw ValidationError("commitment beta must be nonnegative");
  return scale(mean(square(sub(stop_gradient(w_hat), w_norm))), static_cast<T>(beta));
}

// s * (w' + sg(w_hat' - w')): forward is s * w_hat' exactly, and the
// Jacobian with respect to w' is diag(s).
template <class T>
Tensor<T> ste_reconstruct(const Tensor<T>& w_norm, const Tensor<T>& w_hat, const ChannelScale<T>& scale) {
  return scale_rows(straight_through(w_norm, w_hat), std::span<const T>(scale.s));
}

struct EmaReport {
  std::size_t reseeded = 0;
};

// EMA K-means step:
//   n_i <- alpha * n_i + (1 - alpha) * count_i
//   E_i <- alpha * E_i + (1 - alpha) * sum_i
//   c_i <- E_i / (n_i + epsilon)
// The zero level stays pinned. Entries with n_i below the dead floor are
// reseeded from a random current weight of the same sign. Levels are then
// re-sorted with the EMA arrays permuted in lockstep.
template <class T, class Rng>
EmaReport ema_update(Codebook& cb, std::span<const T> w_norm, std::span<const std::int32_t> indices, Rng& rng,
                     double dead_floor = CodebookOptions{}.dead_floor) {
  const std::size_t n = cb.size();
  if (indices.size() != w_norm.size()) {
    throw ValidationError("ema_update: " + std::to_string(indices.size()) + " indices for " +
                          std::to_string(w_norm.size()) + " weights");
  }
  std::vector<double> counts(n, 0.0), sums(n, 0.0);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const auto idx = indices[j];
    if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
      throw ValidationError("ema_update: index " + std::to_string(idx) + " out of range for codebook of size " +
                            std::to_string(n));
    }
    counts[static_cast<std::size_t>(idx)] += 1.0;
    sums[static_cast<std::size_t>(idx)] += static_cast<double>(w_norm[j]);
  }
  const double a = cb.alpha;
  const auto zero_it = std::find(cb.levels.begin(), cb.levels.end(), 0.0);
  const auto zero = static_cast<std::size_t>(zero_it - cb.levels.begin());
  EmaReport report;
  for (std::size_t i = 0; i < n; ++i) {
    cb.ema_counts[i] = a * cb.ema_counts[i] + (1.0 - a) * counts[i];
    cb.ema_sums[i] = a * cb.ema_sums[i] + (1.0 - a) * sums[i];
    if (i == zero) continue;
    if (cb.ema_counts[i] < dead_floor) {
      const bool positive = cb.levels[i] > 0.0;
      std::vector<double> pool;
      for (T v : w_norm)
        if (positive ? v > T(0) : v < T(0)) pool.push_back(static_cast<double>(v));
      if (!pool.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        cb.levels[i] = pool[pick(rng)];
        cb.ema_counts[i] = 1.0;
        cb.ema_sums[i] = cb.levels[i];
        ++report.reseeded;
      }
      continue;
    }
    cb.levels[i] = cb.ema_sums[i] / (cb.ema_counts[i] + cb.epsilon);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return cb.levels[l] < cb.levels[r]; });
  auto permute = [&](std::vector<double>& v) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = v[order[i]];
    v = std::move(out);
  };
  permute(cb.levels);
  permute(cb.ema_counts);
  permute(cb.ema_sums);
  const bool degenerate = std::all_of(cb.levels.begin(), cb.levels.end(), [](double v) { return v == 0.0; });
  if (!degenerate) {
    for (std::size_t i = 1; i < n; ++i) {
      if (cb.levels[i] <= cb.levels[i - 1]) {
        cb.levels[i] = std::nextafter(cb.levels[i - 1], std::numeric_limits<double>::infinity());
      }
    }
  }
  return report;
}

// Quantized view of one layer's weights, as used in a forward pass.
template <class T>
struct QuantizedWeight {
  Tensor<T> reconstructed;  // s * w_hat', gradient straight through to w
  Tensor<T> commit;         // undefined when not requested
  std::vector<std::int32_t> indices;
};

template <class T>
QuantizedWeight<T> quantize_weight(const Tensor<T>& w, const ChannelScale<T>& scale, const Codebook& cb,
                                   double beta, bool with_commit) {
  auto w_norm = normalize_weights(w, scale);
  auto assignment = assign_nearest(w_norm, cb);
  QuantizedWeight<T> out;
  if (with_commit) out.commit = commitment_loss(w_norm, assignment.quantized, beta);
  out.reconstructed = ste_reconstruct(w_norm, assignment.quantized, scale);
  out.indices = std::move(assignment.indices);
  return out;
}

}  // namespace qatlab
