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

// Desk-scale architectures and the (optionally quantized) forward pass.
//
// cnn-small: three blocks of two 3x3 convs with 16, 32 and 64 channels; the
// second conv of each block downsamples with stride 2. A linear head follows.
// mlp-small: four linear layers (128, 64, 64, classes).
// The first and last layers stay full precision; every other layer has its
// weights and its input activations quantized.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "qatlab/act_quant.hpp"
#include "qatlab/ops.hpp"
#include "qatlab/tensor.hpp"
#include "qatlab/weight_quant.hpp"

namespace qatlab {

enum class LayerKind { conv, linear };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::linear;
  std::size_t in = 0, out = 0;
  std::size_t kernel = 1, stride = 1, pad = 0;
  bool quantized = false;

  Shape weight_shape() const {
    return kind == LayerKind::conv ? Shape{out, in, kernel, kernel} : Shape{out, in};
  }
};

struct ModelSpec {
  std::string arch;
  std::size_t channels = 1, height = 1, width = 1;
  int classes = 10;
  std::vector<LayerSpec> layers;

  std::vector<std::size_t> quantized_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].quantized) out.push_back(i);
    return out;
  }
  std::vector<std::string> quantized_names() const {
    std::vector<std::string> out;
    for (auto i : quantized_layers()) out.push_back(layers[i].name);
    return out;
  }
};

inline ModelSpec make_model_spec(const std::string& arch, std::size_t channels, std::size_t height, std::size_t width,
                                 int classes) {
  if (classes < 2) throw ValidationError("model needs at least 2 classes");
  ModelSpec spec;
  spec.arch = arch;
  spec.channels = channels;
  spec.height = height;
  spec.width = width;
  spec.classes = classes;
  const auto n_classes = static_cast<std::size_t>(classes);
  if (arch == "cnn-small") {
    const std::size_t widths[3] = {16, 32, 64};
    std::size_t c = channels, h = height, w = width;
    int idx = 1;
    for (std::size_t block = 0; block < 3; ++block) {
      for (std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
        LayerSpec l;
        l.name = "conv" + std::to_string(idx++);
        l.kind = LayerKind::conv;
        l.in = c;
        l.out = widths[block];
        l.kernel = 3;
        l.stride = stride;
        l.pad = 1;
        h = conv_out_extent(h, 3, stride, 1);
        w = conv_out_extent(w, 3, stride, 1);
        c = l.out;
        spec.layers.push_back(l);
      }
    }
    spec.layers.push_back({"fc", LayerKind::linear, c * h * w, n_classes});
  } else if (arch == "mlp-small") {
    const std::size_t dims[] = {channels * height * width, 128, 64, 64, n_classes};
    for (std::size_t i = 0; i + 1 < std::size(dims); ++i)
      spec.layers.push_back({"fc" + std::to_string(i + 1), LayerKind::linear, dims[i], dims[i + 1]});
  } else {
    throw ValidationError("unknown architecture '" + arch + "' (expected cnn-small or mlp-small)");
  }
  for (std::size_t i = 1; i + 1 < spec.layers.size(); ++i) spec.layers[i].quantized = true;
  return spec;
}

template <class T>
struct Layer {
  LayerSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <class T>
class Model {
 public:
  Model() = default;

  // He-normal weights, zero biases.
  template <std::uniform_random_bit_generator Rng>
  Model(ModelSpec spec, Rng& rng) : spec_(std::move(spec)) {
    for (const auto& ls : spec_.layers) {
      const auto shape = ls.weight_shape();
      const double fan_in = static_cast<double>(shape_numel(shape) / ls.out);
      Layer<T> layer{ls, Tensor<T>::randn(shape, rng, static_cast<T>(std::sqrt(2.0 / fan_in)), true),
                     Tensor<T>::zeros({ls.out}, true)};
      layers_.push_back(std::move(layer));
    }
  }

  // Model with the given parameter values, in layer order (weight, bias).
  Model(ModelSpec spec, const std::vector<std::vector<T>>& values) : spec_(std::move(spec)) {
    if (values.size() != 2 * spec_.layers.size()) throw ValidationError("parameter count does not match model");
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& ls = spec_.layers[i];
      layers_.push_back({ls, Tensor<T>(ls.weight_shape(), values[2 * i], true), Tensor<T>({ls.out}, values[2 * i + 1], true)});
    }
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  Model clone() const {
    std::vector<std::vector<T>> values;
    for (const auto& p : parameters()) values.push_back(p.values());
    return Model(spec_, values);
  }

  void zero_grad() {
    for (auto& l : layers_) {
      l.weight.zero_grad();
      l.bias.zero_grad();
    }
  }

 private:
  ModelSpec spec_;
  std::vector<Layer<T>> layers_;
};

// Quantizer state of one quantized layer. Weights and input activations share
// the bit-width.
template <class T>
struct LayerQuant {
  int bits = 0;
  ChannelScale<T> scale;
  Codebook codebook;
  ActQuantizer<T> act;

  LayerQuant clone() const {
    LayerQuant out = *this;
    out.act.thresholds = act.thresholds.clone().set_requires_grad(true);
    out.act.out_scale = act.out_scale.clone().set_requires_grad(true);
    return out;
  }
};

struct ForwardOptions {
  bool quantize = false;     // use the quantizers
  bool with_commit = false;  // build per-layer commitment losses
  double beta = 0.25;
};

template <class T>
struct ForwardOutput {
  Tensor<T> logits;
  std::vector<Tensor<T>> commits;  // one per quantized layer when requested
};

// Called with (quantized-layer position, activation entering that layer).
template <class T>
using ActivationCapture = std::function<void(std::size_t, const Tensor<T>&)>;

template <class T>
ForwardOutput<T> forward(const Model<T>& model, const Tensor<T>& input, const std::vector<LayerQuant<T>>* quant,
                         const ForwardOptions& opt, const ActivationCapture<T>& capture = {}) {
  const auto& layers = model.layers();
  if (opt.quantize && (quant == nullptr || quant->size() != model.spec().quantized_layers().size())) {
    throw StateError("forward: quantized forward needs one quantizer per quantized layer");
  }
  ForwardOutput<T> out;
  Tensor<T> h = input;
  std::size_t qpos = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const auto& ls = layer.spec;
    OpScope scope(ls.name);
    Tensor<T> w = layer.weight;
    if (ls.quantized) {
      if (capture) capture(qpos, h);
      if (opt.quantize) {
        const auto& q = (*quant)[qpos];
        h = act_forward(h, q.act);
        auto qw = quantize_weight(layer.weight, q.scale, q.codebook, opt.beta, opt.with_commit);
        if (opt.with_commit) out.commits.push_back(std::move(qw.commit));
        w = std::move(qw.reconstructed);
      }
      ++qpos;
    }
    if (ls.kind == LayerKind::conv) {
      h = add_channel_bias(conv2d(h, w, ls.stride, ls.pad), layer.bias);
    } else {
      if (h.rank() != 2) h = flatten(h);
      h = linear(h, w, layer.bias);
    }
    if (i + 1 < layers.size()) h = relu(h);
  }
  out.logits = std::move(h);
  return out;
}

}  // namespace qatlab
