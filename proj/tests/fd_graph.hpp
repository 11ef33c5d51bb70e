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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "wwcnn/graph.hpp"
#include "wwcnn/netspec.hpp"

namespace wwcnn::testing {

// Same topology as configs/mini.net at toy widths.
inline constexpr const char* kToySpec = R"(input 16 16 1
layer conv1_conv conv out=3 k=3 pad=1
layer conv1_bn bn
layer conv1 relu
layer pool1 pool k=2
layer conv2_conv conv out=4 k=3 pad=1
layer conv2_bn bn
layer conv2 relu
layer pool2 pool k=2
layer conv3_conv conv out=4 k=3 pad=1
layer conv3_bn bn
layer conv3 relu
layer conv4_conv conv out=4 k=3 pad=1
layer conv4_bn bn
layer conv4 relu
layer pool4 pool k=2
layer fc6_fc fc out=8
layer fc6 relu
layer drop6 dropout rate=0.5
layer fc7_fc fc out=8
layer fc7 relu
layer drop7 dropout rate=0.5
head category 4
head pose 6
inject pool1 5 5
inject pool2 5 5
inject conv3 5 5
inject conv4 5 5
lambda 1
)";

/// Rescales weights to 1/sqrt(fan_in) and spreads biases and affine terms so every
/// layer carries signal of order one.
inline void randomize_for_fd(ParamStore<double>& params, std::uint64_t seed) {
  for (auto& p : params) {
    if (!p.trainable) continue;
    Rng rng(derive_seed(seed, p.name));
    auto& v = p.value;
    if (p.init == Init::Gaussian) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(v.size() / v.dim(0)));
      for (auto& x : v.values()) x = rng.normal(0.0, sd);
    } else if (p.init == Init::One) {
      for (auto& x : v.values()) x = rng.uniform(0.5, 1.5);
    } else {
      for (auto& x : v.values()) x = rng.uniform(-0.3, 0.3);
    }
  }
}

inline Batch<double> random_batch(const Graph& g, std::size_t n, std::size_t categories,
                                  std::size_t poses, std::uint64_t seed) {
  Shape s{n};
  s.insert(s.end(), g.input_shape().begin(), g.input_shape().end());
  Batch<double> b;
  b.images = random_tensor(s, seed, 0.0, 1.0);
  Rng rng(derive_seed(seed, "labels"));
  for (std::size_t i = 0; i < n; ++i) {
    b.category.push_back(rng.below(categories));
    b.pose.push_back(rng.below(poses));
  }
  return b;
}

struct GraphFdResult {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // stencil crossed a relu or max-pool kink
  double max_rel = 0.0;
  std::string worst;
};

namespace detail {

// Piecewise-linear structure of a forward pass: relu sign pattern and pool switches.
inline std::vector<std::size_t> kink_signature(const Graph& g, const ActivationCache<double>& c) {
  std::vector<std::size_t> sig;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& n = g.node(i);
    if (!c.nodes[i].computed) continue;
    if (n.kind == OpKind::Relu)
      for (double v : c.nodes[i].output.values()) sig.push_back(v > 0.0);
    else if (n.kind == OpKind::Pool)
      sig.insert(sig.end(), c.nodes[i].switches.index.begin(), c.nodes[i].switches.index.end());
  }
  return sig;
}

}  // namespace detail

/// Central finite differences of sum_s w_s * sink_s against backward() for `samples`
/// randomly chosen trainable scalars.
inline GraphFdResult graph_fd_check(const Graph& g, ParamStore<double>& params,
                                    const Batch<double>& batch, const SinkWeights& weights,
                                    std::size_t samples, std::uint64_t seed,
                                    kernels::Mode mode = kernels::Mode::Train, double h = 1e-4) {
  ForwardOptions opt;
  opt.mode = mode;
  opt.seed = derive_seed(seed, "dropout");
  auto loss_of = [&](const ActivationCache<double>& c) {
    long double s = 0.0L;
    for (const auto& [name, w] : weights)
      if (w != 0.0) s += static_cast<long double>(w) * c.sink_values.at(name);
    return static_cast<double>(s);
  };
  const auto base = forward(g, params, batch, opt);
  const auto grads = backward(g, params, base, weights);
  const auto base_sig = detail::kink_signature(g, base);

  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t p = 0; p < params.size(); ++p)
    if (params[p].trainable)
      for (std::size_t j = 0; j < params[p].value.size(); ++j) slots.emplace_back(p, j);
  Rng rng(derive_seed(seed, "pick"));
  for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);

  GraphFdResult r;
  for (const auto& [p, j] : slots) {
    if (r.checked >= samples) break;
    double& x = params[p].value[j];
    const double x0 = x;
    bool kink = false;
    auto f = [&] {
      const auto c = forward(g, params, batch, opt);
      kink = kink || detail::kink_signature(g, c) != base_sig;
      return loss_of(c);
    };
    const double num = numeric_grad(f, x, h);
    x = x0;
    if (kink) {
      ++r.skipped;
      continue;
    }
    const double err = rel_error(grads[p][j], num);
    if (err > r.max_rel) {
      r.max_rel = err;
      r.worst = params[p].name + "[" + std::to_string(j) + "] analytic " + std::to_string(grads[p][j]) +
                " numeric " + std::to_string(num);
    }
    ++r.checked;
  }
  return r;
}

}  // namespace wwcnn::testing
