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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qatlab/common.hpp"
#include "qatlab/tensor.hpp"

namespace qatlab {

// Images stored as N x C x H x W floats in [0, 1].
struct Dataset {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_size() const noexcept { return channels * height * width; }
  Shape sample_shape() const { return {channels, height, width}; }
  int num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * sample_size(), sample_size());
  }

  // Samples [first, first + count) as a new dataset.
  Dataset slice(std::size_t first, std::size_t count) const {
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(first * sample_size()),
                      pixels.begin() + static_cast<std::ptrdiff_t>((first + count) * sample_size()));
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                      labels.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
  }
};

template <class T = float>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

template <class T = float>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<T> v;
  v.reserve(indices.size() * ds.sample_size());
  Batch<T> out;
  for (auto i : indices) {
    auto s = ds.sample(i);
    v.insert(v.end(), s.begin(), s.end());
    out.labels.push_back(ds.labels[i]);
  }
  out.images = Tensor<T>({indices.size(), ds.channels, ds.height, ds.width}, std::move(v));
  return out;
}

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& file) {
  if (offset + 4 > b.size()) {
    throw FormatError(file + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// IDX (MNIST-style) images and labels; both headers are big-endian.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);
  const auto in = images_path.string(), ln = labels_path.string();

  const auto magic = detail::read_be32(img, 0, in);
  if (magic != kIdxImagesMagic) {
    std::ostringstream os;
    os << in << ": bad IDX image magic 0x" << std::hex << magic << " at byte offset 0";
    throw FormatError(os.str());
  }
  const std::size_t n = detail::read_be32(img, 4, in);
  const std::size_t rows = detail::read_be32(img, 8, in);
  const std::size_t cols = detail::read_be32(img, 12, in);
  if (rows == 0 || cols == 0) throw FormatError(in + ": zero image extent at byte offset 8");
  const std::size_t expected = 16 + n * rows * cols;
  if (img.size() != expected) {
    throw FormatError(in + ": expected " + std::to_string(expected) + " bytes, data ends at byte offset " +
                      std::to_string(img.size()));
  }

  const auto lmagic = detail::read_be32(lab, 0, ln);
  if (lmagic != kIdxLabelsMagic) {
    std::ostringstream os;
    os << ln << ": bad IDX label magic 0x" << std::hex << lmagic << " at byte offset 0";
    throw FormatError(os.str());
  }
  const std::size_t nl = detail::read_be32(lab, 4, ln);
  if (nl != n) throw FormatError(ln + ": label count " + std::to_string(nl) + " at byte offset 4 != image count " + std::to_string(n));
  if (lab.size() != 8 + n) {
    throw FormatError(ln + ": expected " + std::to_string(8 + n) + " bytes, data ends at byte offset " +
                      std::to_string(lab.size()));
  }

  Dataset ds;
  ds.channels = 1;
  ds.height = rows;
  ds.width = cols;
  ds.pixels.resize(n * rows * cols);
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) ds.pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = lab[8 + i];
  return ds;
}

// One sample per line: label, then H*W pixel values in [0, 255]. Images are
// square and single-channel; the first row fixes the field count.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  Dataset ds;
  std::string line;
  std::size_t line_no = 0, fields_expected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        fields.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": non-numeric field '" + cell + "'");
      }
    }
    if (fields_expected == 0) {
      fields_expected = fields.size();
      const auto px = fields_expected - 1;
      const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(px))));
      if (fields_expected < 2 || side * side != px) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + std::to_string(px) +
                          " pixels do not form a square image");
      }
      ds.height = ds.width = side;
    }
    if (fields.size() != fields_expected) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                        std::to_string(fields_expected) + " fields, got " + std::to_string(fields.size()));
    }
    const double label = fields[0];
    if (label < 0 || label != std::floor(label)) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": invalid label");
    }
    ds.labels.push_back(static_cast<int>(label));
    for (std::size_t i = 1; i < fields.size(); ++i) {
      if (fields[i] < 0.0 || fields[i] > 255.0) {
        throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": pixel outside [0, 255]");
      }
      ds.pixels.push_back(static_cast<float>(fields[i] / 255.0));
    }
  }
  if (ds.labels.empty()) throw FormatError(path.string() + ": no samples");
  return ds;
}

struct SyntheticOptions {
  std::uint64_t seed = 0;
  std::size_t samples = 1000;
  int classes = 10;
  std::size_t image_size = 17;
  int blobs_per_class = 3;
  double jitter = 1.0;      // std-dev of blob-centre displacement, pixels
  double blob_sigma = 1.6;  // blob radius, pixels
  double noise = 0.08;      // additive pixel noise
};

// Class c is a fixed constellation of Gaussian blobs; each sample jitters the
// blob centres and amplitudes and adds pixel noise. Class prototypes depend
// only on the seed, so train and validation splits drawn with the same seed
// share them.
inline Dataset synthetic_blobs(const SyntheticOptions& opt, std::uint64_t sample_stream = 0) {
  if (opt.classes < 2) throw ValidationError("synthetic dataset needs at least 2 classes");
  if (opt.image_size < 5) throw ValidationError("synthetic image size must be at least 5");
  std::mt19937_64 proto_rng(opt.seed * 0x9e3779b97f4a7c15ULL + 1);
  const double lo = 2.0, hi = static_cast<double>(opt.image_size) - 3.0;
  std::uniform_real_distribution<double> pos(lo, hi);
  struct Blob {
    double y, x, amp;
  };
  std::vector<std::vector<Blob>> protos(static_cast<std::size_t>(opt.classes));
  std::uniform_real_distribution<double> amp(0.6, 1.0);
  for (auto& p : protos)
    for (int b = 0; b < opt.blobs_per_class; ++b) p.push_back({pos(proto_rng), pos(proto_rng), amp(proto_rng)});

  std::mt19937_64 rng(opt.seed * 0x9e3779b97f4a7c15ULL + 0x51ed2705ULL + sample_stream * 0x2545f4914f6cdd1dULL);
  std::normal_distribution<double> jit(0.0, opt.jitter);
  std::normal_distribution<double> noise(0.0, opt.noise);
  std::uniform_real_distribution<double> scale(0.7, 1.0);
  std::uniform_int_distribution<int> label_dist(0, opt.classes - 1);

  Dataset ds;
  ds.channels = 1;
  ds.height = ds.width = opt.image_size;
  const std::size_t S = opt.image_size;
  ds.pixels.resize(opt.samples * S * S);
  ds.labels.resize(opt.samples);
  const double inv2s2 = 1.0 / (2.0 * opt.blob_sigma * opt.blob_sigma);
  for (std::size_t i = 0; i < opt.samples; ++i) {
    const int label = label_dist(rng);
    ds.labels[i] = label;
    std::vector<Blob> blobs = protos[static_cast<std::size_t>(label)];
    for (auto& b : blobs) {
      b.y += jit(rng);
      b.x += jit(rng);
      b.amp *= scale(rng);
    }
    float* img = ds.pixels.data() + i * S * S;
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        double v = noise(rng);
        for (const auto& b : blobs) {
          const double dy = static_cast<double>(y) - b.y, dx = static_cast<double>(x) - b.x;
          v += b.amp * std::exp(-(dy * dy + dx * dx) * inv2s2);
        }
        img[y * S + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }
  return ds;
}

}  // namespace qatlab
