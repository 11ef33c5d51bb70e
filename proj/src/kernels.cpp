// Copyright 2026 The wwcnn Authors
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

#include "wwcnn/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "parallel.hpp"

namespace wwcnn::kernels {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

std::atomic<std::size_t> g_threads{0};

void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " must be NCHW, got " + shape_str(s));
}

std::size_t flat_features(const Shape& s) {
  std::size_t f = 1;
  for (std::size_t i = 1; i < s.size(); ++i) f *= s[i];
  return f;
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, ho, wo, stride, pad;
  std::size_t col_rows() const { return c * k * k; }
  std::size_t col_cols() const { return ho * wo; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                           std::size_t pad) {
  require_rank4(input.shape(), "conv input");
  if (kernels.rank() != 4 || kernels.dim(2) != kernels.dim(3))
    throw ShapeError("conv kernels must be O x C x k x k, got " + shape_str(kernels.shape()));
  if (stride == 0) throw ShapeError("conv stride must be positive");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = kernels.dim(0);
  g.k = kernels.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (kernels.dim(1) != g.c)
    throw ShapeError("conv kernel depth " + std::to_string(kernels.dim(1)) +
                     " does not match input channels " + std::to_string(g.c));
  g.ho = conv_out_dim(g.h, g.k, stride, pad);
  g.wo = conv_out_dim(g.w, g.k, stride, pad);
  return g;
}

// Column matrix for one sample: rows (c, ki, kj), columns (oh, ow).
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const auto hw = g.col_cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const auto hw = g.col_cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = col + ((c * g.k + ki) * g.k + kj) * hw;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          const T* src = row + oh * g.wo;
          for (std::size_t ow = 0; ow < g.wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Channel layout shared by batch norm for N x C x H x W and N x C inputs.
struct ChannelLayout {
  std::size_t outer, channels, inner;
  std::size_t count() const { return outer * inner; }
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
  if (s.size() == 2) return {s[0], s[1], 1};
  throw ShapeError("batch norm input must be N x C x H x W or N x C, got " + shape_str(s));
}

}  // namespace

std::size_t thread_count() {
  auto n = g_threads.load();
  if (n == 0) {
    n = 1;
    if (const char* env = std::getenv("WWCNN_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v > 0) n = static_cast<std::size_t>(v);
    }
    g_threads.store(n);
  }
  return n;
}

void set_thread_count(std::size_t n) { g_threads.store(std::max<std::size_t>(1, n)); }

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("stride must be positive");
  if (in + 2 * pad < k)
    throw ShapeError("kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

std::size_t pool_out_dim(std::size_t in, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw ShapeError("pool window and stride must be positive");
  if (window > in)
    throw ShapeError("pool window " + std::to_string(window) + " larger than input " +
                     std::to_string(in));
  return (in - window) / stride + 1;
}

// ---------------------------------------------------------------- conv

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(input, kernels, stride, pad);
  if (!bias.empty() && bias.size() != g.o)
    throw ShapeError("conv bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(g.o));
  Tensor<T> out({g.n, g.o, g.ho, g.wo});
  const std::size_t in_stride = g.c * g.h * g.w;
  const std::size_t out_stride = g.o * g.col_cols();
  CMapR<T> K(kernels.data(), static_cast<Eigen::Index>(g.o),
             static_cast<Eigen::Index>(g.col_rows()));
  detail::parallel_for(g.n, [&](std::size_t n) {
    std::vector<T> col(g.col_rows() * g.col_cols());
    im2col(input.data() + n * in_stride, g, col.data());
    CMapR<T> C(col.data(), static_cast<Eigen::Index>(g.col_rows()),
               static_cast<Eigen::Index>(g.col_cols()));
    MapR<T> Y(out.data() + n * out_stride, static_cast<Eigen::Index>(g.o),
              static_cast<Eigen::Index>(g.col_cols()));
    Y.noalias() = K * C;
    if (!bias.empty()) {
      for (std::size_t o = 0; o < g.o; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& kernels, std::size_t stride, std::size_t pad,
                             bool want_input) {
  const auto g = conv_geometry(input, kernels, stride, pad);
  const Shape expected{g.n, g.o, g.ho, g.wo};
  if (grad_out.shape() != expected)
    throw ShapeError("conv grad_out " + shape_str(grad_out.shape()) + " != forward output " +
                     shape_str(expected));
  ConvGrads<T> grads;
  grads.kernels = Tensor<T>(kernels.shape());
  grads.bias = Tensor<T>({g.o});
  if (want_input) grads.input = Tensor<T>(input.shape());

  const std::size_t in_stride = g.c * g.h * g.w;
  const std::size_t out_stride = g.o * g.col_cols();
  const std::size_t ksize = kernels.size();
  CMapR<T> K(kernels.data(), static_cast<Eigen::Index>(g.o),
             static_cast<Eigen::Index>(g.col_rows()));

  // Per-sample kernel gradients, reduced in sample order below.
  std::vector<T> partial(g.n * ksize);
  detail::parallel_for(g.n, [&](std::size_t n) {
    std::vector<T> col(g.col_rows() * g.col_cols());
    im2col(input.data() + n * in_stride, g, col.data());
    CMapR<T> C(col.data(), static_cast<Eigen::Index>(g.col_rows()),
               static_cast<Eigen::Index>(g.col_cols()));
    CMapR<T> G(grad_out.data() + n * out_stride, static_cast<Eigen::Index>(g.o),
               static_cast<Eigen::Index>(g.col_cols()));
    MapR<T> P(partial.data() + n * ksize, static_cast<Eigen::Index>(g.o),
              static_cast<Eigen::Index>(g.col_rows()));
    P.noalias() = G * C.transpose();
    if (want_input) {
      MapR<T> GC(col.data(), static_cast<Eigen::Index>(g.col_rows()),
                 static_cast<Eigen::Index>(g.col_cols()));
      GC.noalias() = K.transpose() * G;
      col2im(col.data(), g, grads.input.data() + n * in_stride);
    }
  });
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* p = partial.data() + n * ksize;
    T* dst = grads.kernels.data();
    for (std::size_t i = 0; i < ksize; ++i) dst[i] += p[i];
  }
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const T* row = grad_out.data() + n * out_stride + o * g.col_cols();
      T s = 0;
      for (std::size_t i = 0; i < g.col_cols(); ++i) s += row[i];
      grads.bias[o] += s;
    }
  }
  return grads;
}

// ---------------------------------------------------------------- pool

template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
  require_rank4(input.shape(), "pool input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = pool_out_dim(h, window, stride);
  const std::size_t wo = pool_out_dim(w, window, stride);
  PoolResult<T> r{Tensor<T>({n, c, ho, wo}), {}};
  r.switches.index.resize(r.output.size());
  std::size_t out_i = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow, ++out_i) {
        std::size_t best = base + (oh * stride) * w + ow * stride;
        T best_v = input[best];
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oh * stride + i) * w + ow * stride + j;
            // Strict comparison keeps the first (lowest index) maximum.
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        r.output[out_i] = best_v;
        r.switches.index[out_i] = best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const PoolSwitches& switches,
                           const Shape& input_shape) {
  if (grad_out.size() != switches.index.size())
    throw ShapeError("pool grad_out has " + std::to_string(grad_out.size()) + " cells but " +
                     std::to_string(switches.index.size()) + " switches were recorded");
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad[switches.index[i]] += grad_out[i];
  return grad;
}

// ---------------------------------------------------------------- batch norm

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                                     const Tensor<T>& beta, Mode mode,
                                     const BatchNormState<T>& running, double momentum,
                                     double eps) {
  if (input.empty()) throw ShapeError("batch norm on an empty batch");
  const auto L = channel_layout(input.shape());
  if (L.outer == 0) throw ShapeError("batch norm on zero batch size");
  if (gamma.size() != L.channels || beta.size() != L.channels)
    throw ShapeError("batch norm gamma/beta length must equal channel count " +
                     std::to_string(L.channels));
  if (running.running_mean.size() != L.channels || running.running_var.size() != L.channels)
    throw ShapeError("batch norm running stats length must equal channel count " +
                     std::to_string(L.channels));

  BatchNormResult<T> r;
  r.output = Tensor<T>(input.shape());
  r.normalized = Tensor<T>(input.shape());
  r.inv_std = Tensor<T>({L.channels});
  r.updated = running;
  const double m = static_cast<double>(L.count());

  for (std::size_t c = 0; c < L.channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t o = 0; o < L.outer; ++o) {
        const T* x = input.data() + (o * L.channels + c) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) mean += x[i];
      }
      mean /= m;
      for (std::size_t o = 0; o < L.outer; ++o) {
        const T* x = input.data() + (o * L.channels + c) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double d = x[i] - mean;
          var += d * d;
        }
      }
      var /= m;
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      r.updated.running_mean[c] =
          static_cast<T>(momentum * running.running_mean[c] + (1.0 - momentum) * mean);
      r.updated.running_var[c] =
          static_cast<T>(momentum * running.running_var[c] + (1.0 - momentum) * unbiased);
    } else {
      mean = running.running_mean[c];
      var = running.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    r.inv_std[c] = static_cast<T>(inv_std);
    const T tm = static_cast<T>(mean), ti = static_cast<T>(inv_std);
    for (std::size_t o = 0; o < L.outer; ++o) {
      const std::size_t off = (o * L.channels + c) * L.inner;
      const T* x = input.data() + off;
      T* xh = r.normalized.data() + off;
      T* y = r.output.data() + off;
      for (std::size_t i = 0; i < L.inner; ++i) {
        xh[i] = (x[i] - tm) * ti;
        y[i] = gamma[c] * xh[i] + beta[c];
      }
    }
  }
  return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized,
                                     const Tensor<T>& inv_std, const Tensor<T>& gamma, Mode mode) {
  if (grad_out.shape() != normalized.shape())
    throw ShapeError("batch norm grad_out " + shape_str(grad_out.shape()) +
                     " != forward output " + shape_str(normalized.shape()));
  const auto L = channel_layout(grad_out.shape());
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>({L.channels}),
                      Tensor<T>({L.channels})};
  const double m = static_cast<double>(L.count());
  for (std::size_t c = 0; c < L.channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t o = 0; o < L.outer; ++o) {
      const std::size_t off = (o * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += static_cast<double>(grad_out[off + i]) * normalized[off + i];
      }
    }
    g.beta[c] = static_cast<T>(sum_g);
    g.gamma[c] = static_cast<T>(sum_gx);
    const double gm = gamma[c], is = inv_std[c];
    for (std::size_t o = 0; o < L.outer; ++o) {
      const std::size_t off = (o * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        double dx;
        if (mode == Mode::Train) {
          dx = gm * is / m * (m * grad_out[off + i] - sum_g - normalized[off + i] * sum_gx);
        } else {
          dx = gm * is * grad_out[off + i];
        }
        g.input[off + i] = static_cast<T>(dx);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& output) {
  if (grad_out.shape() != output.shape())
    throw ShapeError("relu grad_out " + shape_str(grad_out.shape()) + " != output " +
                     shape_str(output.shape()));
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = output[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Eval || rate == 0.0) return {input, {}};
  DropoutResult<T> r{Tensor<T>(input.shape()), Tensor<T>(input.shape())};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T m = rng.uniform() < rate ? T(0) : keep_scale;
    r.mask[i] = m;
    r.output[i] = input[i] * m;
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask) {
  if (mask.empty()) return grad_out;
  if (mask.shape() != grad_out.shape())
    throw ShapeError("dropout grad_out " + shape_str(grad_out.shape()) + " != mask " +
                     shape_str(mask.shape()));
  Tensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask[i];
  return g;
}

// ---------------------------------------------------------------- fc

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.rank() < 2) throw ShapeError("fc input must be batched, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), f = flat_features(input.shape());
  if (weights.rank() != 2 || weights.dim(1) != f)
    throw ShapeError("fc weights " + shape_str(weights.shape()) + " do not match " +
                     std::to_string(f) + " input features");
  const std::size_t o = weights.dim(0);
  if (!bias.empty() && bias.size() != o)
    throw ShapeError("fc bias length " + std::to_string(bias.size()) + " != " + std::to_string(o));
  Tensor<T> out({n, o});
  CMapR<T> X(input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  CMapR<T> W(weights.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  MapR<T> Y(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
  Y.noalias() = X * W.transpose();
  if (!bias.empty()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) out[i * o + j] += bias[j];
  }
  return out;
}

template <typename T>
FcGrads<T> fc_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weights,
                       bool has_bias, bool want_input) {
  const std::size_t n = input.dim(0), f = flat_features(input.shape()), o = weights.dim(0);
  if (grad_out.shape() != Shape{n, o})
    throw ShapeError("fc grad_out " + shape_str(grad_out.shape()) + " != " +
                     shape_str(Shape{n, o}));
  FcGrads<T> g;
  CMapR<T> X(input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
  CMapR<T> W(weights.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  CMapR<T> G(grad_out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o));
  g.weights = Tensor<T>(weights.shape());
  MapR<T> GW(g.weights.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  GW.noalias() = G.transpose() * X;
  if (has_bias) {
    g.bias = Tensor<T>({o});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < o; ++j) g.bias[j] += grad_out[i * o + j];
  }
  if (want_input) {
    g.input = Tensor<T>(input.shape());
    MapR<T> GX(g.input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
    GX.noalias() = G * W;
  }
  return g;
}

// ---------------------------------------------------------------- fan-in

template <typename T>
Tensor<T> accumulate_fanin(std::span<const Tensor<T>* const> contributions) {
  if (contributions.empty()) throw ShapeError("fan-in needs at least one contribution");
  Tensor<T> sum = *contributions[0];
  for (std::size_t k = 1; k < contributions.size(); ++k) {
    const auto& c = *contributions[k];
    if (c.shape() != sum.shape())
      throw ShapeError("fan-in contribution " + std::to_string(k) + " has shape " +
                       shape_str(c.shape()) + ", expected " + shape_str(sum.shape()));
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += c[i];
  }
  return sum;
}

// ---------------------------------------------------------------- softmax

template <typename T>
SoftmaxLoss<T> softmax_ce(std::span<const T> logits, std::size_t true_class) {
  const std::size_t k = logits.size();
  if (k < 2) throw ConfigError("softmax needs at least 2 classes");
  if (true_class >= k)
    throw ConfigError("class index " + std::to_string(true_class) + " out of range " +
                      std::to_string(k));
  double mx = -std::numeric_limits<double>::infinity();
  for (auto v : logits) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (auto v : logits) z += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(z);
  SoftmaxLoss<T> r{lse - static_cast<double>(logits[true_class]), Tensor<T>({k})};
  for (std::size_t i = 0; i < k; ++i)
    r.grad_logits[i] = static_cast<T>(std::exp(static_cast<double>(logits[i]) - lse) -
                                      (i == true_class ? 1.0 : 0.0));
  return r;
}

template <typename T>
BatchSoftmaxLoss<T> softmax_ce_batch(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax logits must be N x K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw ShapeError("got " + std::to_string(labels.size()) + " labels for a batch of " +
                     std::to_string(n));
  BatchSoftmaxLoss<T> r{0.0, Tensor<T>({n, k})};
  if (k < 2) throw ConfigError("softmax needs at least 2 classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k)
      throw ConfigError("class index " + std::to_string(labels[i]) + " out of range " +
                        std::to_string(k));
    const T* row = logits.data() + i * k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(z);
    r.loss += lse - static_cast<double>(row[labels[i]]);
    for (std::size_t j = 0; j < k; ++j)
      r.probabilities[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
  }
  r.loss /= static_cast<double>(n);
  return r;
}

template <typename T>
Tensor<T> softmax_ce_batch_backward(const Tensor<T>& probabilities,
                                    std::span<const std::size_t> labels, double scale) {
  const std::size_t n = probabilities.dim(0), k = probabilities.dim(1);
  Tensor<T> g(probabilities.shape());
  const T s = static_cast<T>(scale / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      g[i * k + j] = s * (probabilities[i * k + j] - (j == labels[i] ? T(1) : T(0)));
  return g;
}

#define WWCNN_INSTANTIATE(T)                                                                   \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                    std::size_t, std::size_t);                                 \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        std::size_t, std::size_t, bool);                       \
  template PoolResult<T> maxpool_forward(const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> maxpool_backward(const Tensor<T>&, const PoolSwitches&, const Shape&);    \
  template BatchNormResult<T> batchnorm_forward(const Tensor<T>&, const Tensor<T>&,            \
                                                const Tensor<T>&, Mode,                        \
                                                const BatchNormState<T>&, double, double);     \
  template BatchNormGrads<T> batchnorm_backward(const Tensor<T>&, const Tensor<T>&,            \
                                                const Tensor<T>&, const Tensor<T>&, Mode);     \
  template Tensor<T> relu_forward(const Tensor<T>&);                                           \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template DropoutResult<T> dropout_forward(const Tensor<T>&, double, Mode, Rng&);             \
  template Tensor<T> dropout_backward(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> fc_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template FcGrads<T> fc_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool,  \
                                  bool);                                                       \
  template Tensor<T> accumulate_fanin(std::span<const Tensor<T>* const>);                      \
  template SoftmaxLoss<T> softmax_ce(std::span<const T>, std::size_t);                         \
  template BatchSoftmaxLoss<T> softmax_ce_batch(const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> softmax_ce_batch_backward(const Tensor<T>&, std::span<const std::size_t>, \
                                               double);

WWCNN_INSTANTIATE(float)
WWCNN_INSTANTIATE(double)

#undef WWCNN_INSTANTIATE

}  // namespace wwcnn::kernels
