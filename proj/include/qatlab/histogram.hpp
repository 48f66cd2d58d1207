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

// Equal-width histograms of layer weights.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qatlab/common.hpp"

namespace qatlab {

struct Histogram {
  std::vector<double> left, right;
  std::vector<std::size_t> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

// `bins` equal bins over [-m, m] with m = max |x| (0.5 when every value is
// zero). The last bin is closed on the right.
template <class T>
Histogram symmetric_histogram(std::span<const T> values, std::size_t bins = 64) {
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  double m = 0.0;
  for (T v : values) m = std::max(m, std::fabs(static_cast<double>(v)));
  if (m == 0.0) m = 0.5;
  Histogram h;
  const double width = 2.0 * m / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.left.push_back(-m + width * static_cast<double>(b));
    h.right.push_back(b + 1 == bins ? m : -m + width * static_cast<double>(b + 1));
  }
  h.counts.assign(bins, 0);
  for (T v : values) {
    const double pos = (static_cast<double>(v) + m) / width;
    auto b = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(bins - 1)));
    ++h.counts[b];
  }
  return h;
}

// Histogram rows, a blank line, then the codebook levels section.
inline std::string histogram_csv(const Histogram& h, std::span<const double> levels) {
  std::ostringstream out;
  char buf[96];
  out << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%zu\n", h.left[b], h.right[b], h.counts[b]);
    out << buf;
  }
  out << "\nlevel_index,level\n";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, levels[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace qatlab
