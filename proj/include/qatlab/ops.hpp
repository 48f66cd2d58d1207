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
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qatlab/tensor.hpp"

namespace qatlab {

namespace detail {

template <class T>
T* parent_grad(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      // Eight fixed lanes so the dot product vectorizes; the order is still deterministic.
      T lane[8] = {};
      std::size_t j = 0;
      for (; j + 8 <= n; j += 8)
        for (std::size_t l = 0; l < 8; ++l) lane[l] += arow[j + l] * brow[j + l];
      T acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
      for (; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, oh, ow;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return oh * ow; }
};

// cols[(ci,kh,kw), (n,oh,ow)] for the whole batch.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t np = g.n * g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kh = 0; kh < g.k; ++kh)
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        T* row = cols + ((ci * g.k + kh) * g.k + kw) * np;
        for (std::size_t b = 0; b < g.n; ++b) {
          const T* img = x + (b * g.cin + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                            static_cast<std::ptrdiff_t>(g.pad);
            T* out = row + (b * g.oh + oy) * g.ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(out, out + g.ow, T(0));
              continue;
            }
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                              static_cast<std::ptrdiff_t>(g.pad);
              out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                            ? T(0)
                            : img[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t np = g.n * g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kh = 0; kh < g.k; ++kh)
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const T* row = cols + ((ci * g.k + kh) * g.k + kw) * np;
        for (std::size_t b = 0; b < g.n; ++b) {
          T* img = dx + (b * g.cin + ci) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + kh) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            const T* in = row + (b * g.oh + oy) * g.ow;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kw) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              img[static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)] += in[ox];
            }
          }
        }
      }
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    for (std::size_t s = 0; s < 2; ++s)
      if (T* g = detail::parent_grad(n, s))
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    if (T* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    if (T* g = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    const auto& av = n.parents[0]->data;
    const auto& bv = n.parents[1]->data;
    if (T* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
    if (T* g = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [c](detail::Node<T>& n) {
    if (T* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * c;
  });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return make_result<T>("square", a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    const auto& av = n.parents[0]->data;
    if (T* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += T(2) * av[i] * n.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return make_result<T>("sum", {1}, {acc}, {a}, [](detail::Node<T>& n) {
    if (T* g = detail::parent_grad(n, 0)) {
      const auto m = n.parents[0]->data.size();
      for (std::size_t i = 0; i < m; ++i) g[i] += n.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return make_result<T>("mean", {1}, {acc * inv}, {a}, [inv](detail::Node<T>& n) {
    if (T* g = detail::parent_grad(n, 0)) {
      const auto m = n.parents[0]->data.size();
      for (std::size_t i = 0; i < m; ++i) g[i] += n.grad[0] * inv;
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  return make_result<T>("relu", a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    if (T* g = detail::parent_grad(n, 0)) {
      const auto& x = n.parents[0]->data;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (x[i] > T(0)) g[i] += n.grad[i];
    }
  });
}

// sg(x): same value, no gradient to x.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& a) {
  Tensor<T> out(a.shape(), a.values(), false);
  out.node()->op = "stop_gradient";
  return out;
}

// Value of `value`, Jacobian of `through`: the straight-through composite
// through + sg(value - through), with the forward taken from `value` exactly
// instead of through the rounded sum.
template <class T>
Tensor<T> straight_through(const Tensor<T>& through, const Tensor<T>& value) {
  detail::require_same_shape(through, value, "straight_through");
  return make_result<T>("straight_through", value.shape(), value.values(), {through},
                        [](detail::Node<T>& n) {
                          if (T* g = detail::parent_grad(n, 0))
                            for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
                        });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result<T>("reshape", std::move(shape), a.values(), {a}, [](detail::Node<T>& n) {
    if (T* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

// Collapses all trailing dims: [N, ...] -> [N, prod(...)].
template <class T>
Tensor<T> flatten(const Tensor<T>& a) {
  return reshape(a, {a.dim(0), a.numel() / a.dim(0)});
}

// Multiplies slice c along dim 0 by factors[c] (constant, not differentiated).
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, std::span<const T> factors) {
  if (factors.size() != a.dim(0)) {
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                         shape_str(a.shape()));
  }
  const std::size_t inner = a.numel() / a.dim(0);
  std::vector<T> f(factors.begin(), factors.end());
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < f.size(); ++r)
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] = f[r] * a[r * inner + i];
  return make_result<T>("scale_rows", a.shape(), std::move(out), {a},
                        [f = std::move(f), inner](detail::Node<T>& n) {
                          if (T* g = detail::parent_grad(n, 0))
                            for (std::size_t r = 0; r < f.size(); ++r)
                              for (std::size_t i = 0; i < inner; ++i)
                                g[r * inner + i] += f[r] * n.grad[r * inner + i];
                        });
}

// Divides slice c along dim 0 by divisors[c] (constant, not differentiated).
template <class T>
Tensor<T> divide_rows(const Tensor<T>& a, std::span<const T> divisors) {
  if (divisors.size() != a.dim(0)) {
    throw DimensionError("divide_rows: " + std::to_string(divisors.size()) + " divisors for " +
                         shape_str(a.shape()));
  }
  const std::size_t inner = a.numel() / a.dim(0);
  std::vector<T> d(divisors.begin(), divisors.end());
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < d.size(); ++r)
    for (std::size_t i = 0; i < inner; ++i) out[r * inner + i] = a[r * inner + i] / d[r];
  return make_result<T>("divide_rows", a.shape(), std::move(out), {a},
                        [d = std::move(d), inner](detail::Node<T>& n) {
                          if (T* g = detail::parent_grad(n, 0))
                            for (std::size_t r = 0; r < d.size(); ++r)
                              for (std::size_t i = 0; i < inner; ++i)
                                g[r * inner + i] += n.grad[r * inner + i] / d[r];
                        });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](detail::Node<T>& node) {
    const T* av = node.parents[0]->data.data();
    const T* bv = node.parents[1]->data.data();
    if (T* ga = detail::parent_grad(node, 0)) detail::gemm_nt(m, n, k, node.grad.data(), bv, ga);
    if (T* gb = detail::parent_grad(node, 1)) detail::gemm_tn(m, n, k, av, node.grad.data(), gb);
  });
}

// x[N, in] * w[out, in]^T + b[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || b.numel() != w.dim(0)) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + ", " +
                         shape_str(w.shape()) + ", " + shape_str(b.shape()));
  }
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  std::vector<T> out(n * out_f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_f; ++o) out[i * out_f + o] = b[o];
  detail::gemm_nt(n, in, out_f, x.data().data(), w.data().data(), out.data());
  return make_result<T>("linear", {n, out_f}, std::move(out), {x, w, b},
                        [n, in, out_f](detail::Node<T>& node) {
                          const T* xv = node.parents[0]->data.data();
                          const T* wv = node.parents[1]->data.data();
                          const T* g = node.grad.data();
                          if (T* gx = detail::parent_grad(node, 0)) detail::gemm_nn(n, in, out_f, g, wv, gx);
                          if (T* gw = detail::parent_grad(node, 1)) detail::gemm_tn(n, in, out_f, g, xv, gw);
                          if (T* gb = detail::parent_grad(node, 2))
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[i * out_f + o];
                        });
}

// Adds b[C] along dim 1 of x[N, C, ...].
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() < 2 || b.numel() != x.dim(1)) {
    throw DimensionError("add_channel_bias: " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t idx = (i * c + ch) * inner + j;
        out[idx] = x[idx] + b[ch];
      }
  return make_result<T>("add_channel_bias", x.shape(), std::move(out), {x, b},
                        [n, c, inner](detail::Node<T>& node) {
                          const T* g = node.grad.data();
                          if (T* gx = detail::parent_grad(node, 0))
                            for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += g[i];
                          if (T* gb = detail::parent_grad(node, 1))
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t ch = 0; ch < c; ++ch)
                                for (std::size_t j = 0; j < inner; ++j) gb[ch] += g[(i * c + ch) * inner + j];
                        });
}

// Output extent of a convolution; throws when it is not an integer.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (k > in + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
  }
  const std::size_t span = in + 2 * pad - k;
  if (span % stride != 0) {
    throw DimensionError("conv2d: non-integer output extent (" + std::to_string(in) + "+2*" +
                         std::to_string(pad) + "-" + std::to_string(k) + ")/" + std::to_string(stride));
  }
  return span / stride + 1;
}

// Cross-correlation of x[N, Cin, H, W] with w[Cout, Cin, k, k].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  detail::ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.oh = conv_out_extent(g.h, g.k, stride, pad);
  g.ow = conv_out_extent(g.w, g.k, stride, pad);

  const std::size_t np = g.n * g.pixels();
  std::vector<T> cols(g.patch() * np);
  detail::im2col(g, x.data().data(), cols.data());
  std::vector<T> tmp(g.cout * np, T(0));
  detail::gemm_nn(g.cout, np, g.patch(), w.data().data(), cols.data(), tmp.data());
  std::vector<T> out(g.n * g.cout * g.pixels());
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t b = 0; b < g.n; ++b)
      std::copy_n(tmp.data() + co * np + b * g.pixels(), g.pixels(),
                  out.data() + (b * g.cout + co) * g.pixels());

  return make_result<T>("conv2d", {g.n, g.cout, g.oh, g.ow}, std::move(out), {x, w},
                        [g](detail::Node<T>& node) {
                          const std::size_t np = g.n * g.pixels();
                          std::vector<T> gout(g.cout * np);
                          for (std::size_t co = 0; co < g.cout; ++co)
                            for (std::size_t b = 0; b < g.n; ++b)
                              std::copy_n(node.grad.data() + (b * g.cout + co) * g.pixels(), g.pixels(),
                                          gout.data() + co * np + b * g.pixels());
                          const T* wv = node.parents[1]->data.data();
                          if (T* gw = detail::parent_grad(node, 1)) {
                            std::vector<T> cols(g.patch() * np);
                            detail::im2col(g, node.parents[0]->data.data(), cols.data());
                            detail::gemm_nt(g.cout, np, g.patch(), gout.data(), cols.data(), gw);
                          }
                          if (T* gx = detail::parent_grad(node, 0)) {
                            std::vector<T> dcols(g.patch() * np, T(0));
                            detail::gemm_tn(g.cout, np, g.patch(), wv, gout.data(), dcols.data());
                            detail::col2im(g, dcols.data(), gx);
                          }
                        });
}

// Mean over the batch of -log softmax(logits)[label].
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                            " out of range [0, " + std::to_string(c) + ") at row " + std::to_string(i));
    }
  }
  std::vector<T> probs(n * c);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data().data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += std::log(z) - (row[labels[i]] - mx);
  }
  const T inv = T(1) / static_cast<T>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>("softmax_cross_entropy", {1}, {total * inv}, {logits},
                        [probs = std::move(probs), lab = std::move(lab), n, c, inv](detail::Node<T>& node) {
                          if (T* g = detail::parent_grad(node, 0)) {
                            const T go = node.grad[0] * inv;
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < c; ++j) {
                                const T y = static_cast<std::size_t>(lab[i]) == j ? T(1) : T(0);
                                g[i * c + j] += go * (probs[i * c + j] - y);
                              }
                          }
                        });
}

// Index of the largest logit per row.
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data().data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

}  // namespace qatlab
