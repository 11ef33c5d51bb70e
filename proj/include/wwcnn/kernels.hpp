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

#pragma once

// Forward/backward kernels for the layer types used by the graph engine.
// All tensors are NCHW (4-D) or N x F (2-D). Kernels are pure: outputs
// depend only on arguments, and randomness comes in through an explicit Rng.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "wwcnn/rng.hpp"
#include "wwcnn/tensor.hpp"

namespace wwcnn::kernels {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);
std::size_t pool_out_dim(std::size_t in, std::size_t window, std::size_t stride);

// ---- convolution (cross-correlation, no kernel flip) ----

/// input N x C x H x W, kernels O x C x k x k, bias O (may be empty).
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  Tensor<T> bias;
};

/// Gradients of conv2d_forward. `want_input` skips the input gradient when
/// the input is the network's data layer.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Tensor<T>& kernels, std::size_t stride, std::size_t pad,
                             bool want_input = true);

// ---- max pooling ----

/// Flat index into the input tensor of the winning cell, per output cell.
struct PoolSwitches {
  std::vector<std::size_t> index;
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  PoolSwitches switches;
};

/// Ties resolve to the lowest flat index in the window.
template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input, std::size_t window, std::size_t stride);

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const PoolSwitches& switches,
                           const Shape& input_shape);

// ---- batch normalization (per channel over N, H, W) ----

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  Tensor<T> normalized;  // x-hat, kept for backward
  Tensor<T> inv_std;     // per channel
  BatchNormState<T> updated;  // running stats after this call (unchanged in eval)
};

/// Train mode normalizes by batch statistics (biased variance) and returns
/// running stats blended as m * running + (1 - m) * batch, with the
/// unbiased batch variance. Eval mode normalizes by the running stats.
template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                                     const Tensor<T>& beta, Mode mode,
                                     const BatchNormState<T>& running,
                                     double momentum = kBatchNormMomentum,
                                     double eps = kBatchNormEps);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized,
                                     const Tensor<T>& inv_std, const Tensor<T>& gamma, Mode mode);

// ---- elementwise ----

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

/// Gradient passes where the forward output was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& output);

/// Inverted dropout. Train mode keeps each unit with probability 1 - rate and
/// scales it by 1 / (1 - rate); eval mode and rate 0 are the identity.
template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // per-unit multiplier; empty when the op was the identity
};

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& input, double rate, Mode mode, Rng& rng);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask);

// ---- fully connected ----

/// input N x F (any trailing dims are flattened), weights O x F, bias O or empty.
template <typename T>
Tensor<T> fc_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
struct FcGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                       const Tensor<T>& weights, bool has_bias, bool want_input = true);

// ---- fan-in ----

/// Elementwise sum of equally shaped tensors, added in the given order.
template <typename T>
Tensor<T> accumulate_fanin(std::span<const Tensor<T>* const> contributions);

// ---- softmax cross-entropy ----

template <typename T>
struct SoftmaxLoss {
  double loss = 0.0;
  Tensor<T> grad_logits;  // p - onehot(true_class)
};

/// Single sample: loss = -log softmax(logits)[true_class], max-subtracted.
template <typename T>
SoftmaxLoss<T> softmax_ce(std::span<const T> logits, std::size_t true_class);

template <typename T>
struct BatchSoftmaxLoss {
  double loss = 0.0;        // mean over the batch
  Tensor<T> probabilities;  // N x K
};

/// Mean cross-entropy over a batch of logits N x K.
template <typename T>
BatchSoftmaxLoss<T> softmax_ce_batch(const Tensor<T>& logits, std::span<const std::size_t> labels);

/// Gradient of the batch mean loss w.r.t. the logits, scaled by `scale`.
template <typename T>
Tensor<T> softmax_ce_batch_backward(const Tensor<T>& probabilities,
                                    std::span<const std::size_t> labels, double scale);

/// Number of worker threads used for per-sample loops (default 1; the
/// WWCNN_THREADS environment variable overrides). Results never depend on it.
std::size_t thread_count();
void set_thread_count(std::size_t n);

}  // namespace wwcnn::kernels
