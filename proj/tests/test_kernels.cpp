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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "wwcnn/kernels.hpp"

using namespace wwcnn;
using namespace wwcnn::kernels;
using wwcnn::testing::dot;
using wwcnn::testing::max_fd_error;
using wwcnn::testing::random_tensor;

namespace {

Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                           std::size_t s, std::size_t p) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), K = k.dim(2);
  const std::size_t OH = (H + 2 * p - K) / s + 1, OW = (W + 2 * p - K) / s + 1;
  Tensor<double> y({N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v) {
                const long r = static_cast<long>(i * s + u) - static_cast<long>(p);
                const long q = static_cast<long>(j * s + v) - static_cast<long>(p);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                acc += x.at(n, c, r, q) * k.at(o, c, u, v);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

}  // namespace

TEST(Conv, AllOnesWindowSum) {
  Tensor<double> x({1, 1, 3, 3}, 1.0), k({1, 1, 2, 2}, 1.0), b({1}, 0.0);
  auto y = conv2d_forward(x, k, b, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 4.0);
}

TEST(Conv, ZeroKernelGivesBias) {
  auto x = random_tensor({2, 3, 5, 5}, 1);
  Tensor<double> k({2, 3, 3, 3}, 0.0), b({2}, std::vector<double>{0.25, -1.5});
  auto y = conv2d_forward(x, k, b, 1, 1);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_EQ(y.at(n, 0, i, j), 0.25);
        EXPECT_EQ(y.at(n, 1, i, j), -1.5);
      }
}

TEST(Conv, MatchesNestedLoopOracle) {
  auto x = random_tensor({2, 3, 7, 6}, 2);
  auto k = random_tensor({4, 3, 3, 3}, 3);
  auto b = random_tensor({4}, 4);
  auto y = conv2d_forward(x, k, b, 2, 1);
  auto want = conv_oracle(x, k, b, 2, 1);
  ASSERT_EQ(y.shape(), want.shape());
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_LE(wwcnn::testing::rel_error(y[i], want[i]), 1e-6) << i;
}

TEST(Conv, FloatMatchesDouble) {
  auto x = random_tensor({2, 2, 6, 6}, 5);
  auto k = random_tensor({3, 2, 3, 3}, 6);
  auto b = random_tensor({3}, 7);
  auto yd = conv2d_forward(x, k, b, 1, 1);
  auto yf = conv2d_forward(x.cast<float>(), k.cast<float>(), b.cast<float>(), 1, 1);
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-5);
}

TEST(Conv, ChannelMismatchThrows) {
  Tensor<double> x({1, 2, 4, 4}), k({1, 3, 3, 3}), b({1});
  EXPECT_THROW(conv2d_forward(x, k, b, 1, 0), ShapeError);
  Tensor<double> big({1, 2, 5, 5});
  Tensor<double> small({1, 2, 3, 3});
  EXPECT_THROW(conv2d_forward(small, big.reshaped({2, 1, 5, 5}), Tensor<double>({2}), 1, 0), ShapeError);
}

TEST(Conv, ZeroGradGivesZeroGrads) {
  auto x = random_tensor({1, 2, 5, 5}, 8);
  auto k = random_tensor({3, 2, 3, 3}, 9);
  Tensor<double> g({1, 3, 5, 5}, 0.0);
  auto gr = conv2d_backward(g, x, k, 1, 1);
  for (double v : gr.input.values()) EXPECT_EQ(v, 0.0);
  for (double v : gr.kernels.values()) EXPECT_EQ(v, 0.0);
  for (double v : gr.bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv, ScalarOutputKernelGradIsInput) {
  auto x = random_tensor({1, 1, 4, 4}, 10);
  auto k = random_tensor({1, 1, 4, 4}, 11);
  Tensor<double> g({1, 1, 1, 1}, 1.0);
  auto gr = conv2d_backward(g, x, k, 1, 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(gr.kernels[i], x[i]);
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  auto x = random_tensor({2, 3, 7, 6}, 12);
  auto k = random_tensor({4, 3, 3, 3}, 13);
  auto b = random_tensor({4}, 14);
  auto w = random_tensor({2, 4, 4, 3}, 15);
  auto gr = conv2d_backward(w, x, k, 2, 1);
  auto f = [&] { return dot(w, conv2d_forward(x, k, b, 2, 1)); };
  EXPECT_LT(max_fd_error(f, x, gr.input), 1e-5);
  EXPECT_LT(max_fd_error(f, k, gr.kernels), 1e-5);
  EXPECT_LT(max_fd_error(f, b, gr.bias), 1e-5);
}

TEST(Conv, ThreadCountDoesNotChangeResults) {
  auto x = random_tensor({5, 3, 8, 8}, 16).cast<float>();
  auto k = random_tensor({4, 3, 3, 3}, 17).cast<float>();
  auto w = random_tensor({5, 4, 8, 8}, 18).cast<float>();
  const auto before = thread_count();
  set_thread_count(1);
  auto a = conv2d_backward(w, x, k, 1, 1);
  set_thread_count(3);
  auto b = conv2d_backward(w, x, k, 1, 1);
  set_thread_count(before);
  EXPECT_EQ(a.kernels, b.kernels);
  EXPECT_EQ(a.input, b.input);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(MaxPool, TwoByTwo) {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  auto r = maxpool_forward(x, 2, 2);
  EXPECT_EQ(r.output[0], 4.0);
  EXPECT_EQ(r.switches.index[0], 3u);
}

TEST(MaxPool, TiesGoToFirstIndex) {
  Tensor<double> x({1, 1, 4, 4}, 0.5);
  auto r = maxpool_forward(x, 2, 2);
  EXPECT_EQ(r.switches.index, (std::vector<std::size_t>{0, 2, 8, 10}));
  Tensor<double> g({1, 1, 2, 2}, 1.0);
  auto gi = maxpool_backward(g, r.switches, x.shape());
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(gi[i], (i == 0 || i == 2 || i == 8 || i == 10) ? 1.0 : 0.0);
}

TEST(MaxPool, MatchesWindowScan) {
  auto x = random_tensor({1, 2, 6, 6}, 20);
  auto r = maxpool_forward(x, 2, 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double best = -1e300;
        std::size_t arg = 0;
        for (std::size_t u = 0; u < 2; ++u)
          for (std::size_t v = 0; v < 2; ++v) {
            const std::size_t flat = (c * 6 + i * 2 + u) * 6 + j * 2 + v;
            if (x[flat] > best) best = x[flat], arg = flat;
          }
        EXPECT_EQ(r.output.at(0, c, i, j), best);
        EXPECT_EQ(r.switches.index[(c * 3 + i) * 3 + j], arg);
      }
}

TEST(MaxPool, BackwardConservesMassAndMatchesFd) {
  auto x = random_tensor({2, 2, 7, 7}, 21);
  auto r = maxpool_forward(x, 3, 2);
  auto w = random_tensor(r.output.shape(), 22);
  auto gi = maxpool_backward(w, r.switches, x.shape());
  EXPECT_NEAR(std::accumulate(gi.values().begin(), gi.values().end(), 0.0),
              std::accumulate(w.values().begin(), w.values().end(), 0.0), 1e-12);
  auto f = [&] { return dot(w, maxpool_forward(x, 3, 2).output); };
  EXPECT_LT(max_fd_error(f, x, gi), 1e-5);
}

TEST(MaxPool, WindowLargerThanInputThrows) {
  Tensor<double> x({1, 1, 2, 2});
  EXPECT_THROW(maxpool_forward(x, 3, 1), ShapeError);
}

TEST(BatchNorm, StandardizedInputPassesThrough) {
  // Per channel: values -1 and +1, so mean 0 and biased variance 1.
  Tensor<double> x({2, 1, 1, 2}, std::vector<double>{-1, 1, 1, -1});
  Tensor<double> gamma({1}, 1.0), beta({1}, 0.0);
  BatchNormState<double> st{Tensor<double>({1}, 0.0), Tensor<double>({1}, 1.0)};
  auto r = batchnorm_forward(x, gamma, beta, Mode::Train, st);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.output[i], x[i], 1e-5);
}

TEST(BatchNorm, ConstantInputGivesBeta) {
  Tensor<double> x({3, 2, 2, 2}, 7.0);
  Tensor<double> gamma({2}, 2.0), beta({2}, std::vector<double>{0.5, -0.25});
  BatchNormState<double> st{Tensor<double>({2}, 0.0), Tensor<double>({2}, 1.0)};
  auto r = batchnorm_forward(x, gamma, beta, Mode::Train, st);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(r.normalized[(n * 2 + 0) * 4 + i], 0.0);
      EXPECT_EQ(r.output[(n * 2 + 0) * 4 + i], 0.5);
      EXPECT_EQ(r.output[(n * 2 + 1) * 4 + i], -0.25);
    }
}

TEST(BatchNorm, MatchesTwoPassOracle) {
  auto x = random_tensor({4, 3, 5, 5}, 30, -2.0, 3.0);
  auto gamma = random_tensor({3}, 31, 0.5, 1.5);
  auto beta = random_tensor({3}, 32);
  BatchNormState<double> st{random_tensor({3}, 33), random_tensor({3}, 34, 0.5, 2.0)};
  auto r = batchnorm_forward(x, gamma, beta, Mode::Train, st, 0.9, 1e-5);
  const std::size_t m = 4 * 25;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) mean += x[(n * 3 + c) * 25 + i];
    mean /= m;
    double var = 0.0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) var += std::pow(x[(n * 3 + c) * 25 + i] - mean, 2);
    var /= m;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) {
        const std::size_t at = (n * 3 + c) * 25 + i;
        const double want = gamma[c] * (x[at] - mean) / std::sqrt(var + 1e-5) + beta[c];
        EXPECT_LE(wwcnn::testing::rel_error(r.output[at], want), 1e-6);
      }
    EXPECT_NEAR(r.updated.running_mean[c], 0.9 * st.running_mean[c] + 0.1 * mean, 1e-12);
    EXPECT_NEAR(r.updated.running_var[c], 0.9 * st.running_var[c] + 0.1 * var * m / (m - 1), 1e-12);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  auto x = random_tensor({2, 2, 3, 3}, 35);
  Tensor<double> gamma({2}, std::vector<double>{1.5, 0.5}), beta({2}, std::vector<double>{0.1, 0.2});
  BatchNormState<double> st{Tensor<double>({2}, std::vector<double>{0.3, -0.2}),
                            Tensor<double>({2}, std::vector<double>{2.0, 0.5})};
  auto r = batchnorm_forward(x, gamma, beta, Mode::Eval, st);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 9; ++i) {
        const std::size_t at = (n * 2 + c) * 9 + i;
        EXPECT_NEAR(r.output[at], gamma[c] * (x[at] - st.running_mean[c]) / std::sqrt(st.running_var[c] + 1e-5) + beta[c],
                    1e-12);
      }
  EXPECT_EQ(r.updated.running_mean, st.running_mean);
  EXPECT_EQ(r.updated.running_var, st.running_var);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    auto x = random_tensor({3, 2, 3, 4}, 40);
    auto gamma = random_tensor({2}, 41, 0.5, 1.5);
    auto beta = random_tensor({2}, 42);
    BatchNormState<double> st{random_tensor({2}, 43), random_tensor({2}, 44, 0.5, 2.0)};
    auto w = random_tensor(x.shape(), 45);
    auto r = batchnorm_forward(x, gamma, beta, mode, st);
    auto g = batchnorm_backward(w, r.normalized, r.inv_std, gamma, mode);
    auto f = [&] { return dot(w, batchnorm_forward(x, gamma, beta, mode, st).output); };
    EXPECT_LT(max_fd_error(f, x, g.input), 1e-5);
    EXPECT_LT(max_fd_error(f, gamma, g.gamma), 1e-5);
    EXPECT_LT(max_fd_error(f, beta, g.beta), 1e-5);
  }
}

TEST(Relu, ForwardBackward) {
  Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
  auto y = relu_forward(x);
  EXPECT_EQ(y.storage(), (std::vector<double>{0, 0, 2}));
  auto g = relu_backward(Tensor<double>({3}, 1.0), y);
  EXPECT_EQ(g.storage(), (std::vector<double>{0, 0, 1}));
}

TEST(Fc, MatchesMatrixProduct) {
  auto x = random_tensor({3, 2, 2, 2}, 50);
  auto W = random_tensor({5, 8}, 51);
  auto b = random_tensor({5}, 52);
  auto y = fc_forward(x, W, b);
  ASSERT_EQ(y.shape(), (Shape{3, 5}));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 8; ++i) acc += W[o * 8 + i] * x[n * 8 + i];
      EXPECT_NEAR(y[n * 5 + o], acc, 1e-12);
    }
  EXPECT_THROW(fc_forward(x, random_tensor({5, 7}, 53), b), ShapeError);
}

TEST(Fc, BackwardMatchesFiniteDifferences) {
  auto x = random_tensor({4, 6}, 54);
  auto W = random_tensor({3, 6}, 55);
  auto b = random_tensor({3}, 56);
  auto w = random_tensor({4, 3}, 57);
  auto g = fc_backward(w, x, W, true);
  auto f = [&] { return dot(w, fc_forward(x, W, b)); };
  EXPECT_LT(max_fd_error(f, x, g.input), 1e-5);
  EXPECT_LT(max_fd_error(f, W, g.weights), 1e-5);
  EXPECT_LT(max_fd_error(f, b, g.bias), 1e-5);
}

TEST(Dropout, RateZeroIsIdentity) {
  auto x = random_tensor({4, 5}, 60);
  Rng rng(1);
  EXPECT_EQ(dropout_forward(x, 0.0, Mode::Train, rng).output, x);
  EXPECT_EQ(dropout_forward(x, 0.5, Mode::Eval, rng).output, x);
}

TEST(Dropout, RateOutsideRangeThrows) {
  Tensor<double> x({2}, 1.0);
  Rng rng(1);
  EXPECT_THROW(dropout_forward(x, 1.0, Mode::Train, rng), ConfigError);
  EXPECT_THROW(dropout_forward(x, -0.1, Mode::Train, rng), ConfigError);
}

TEST(Dropout, MonteCarloExpectationMatchesInput) {
  auto x = random_tensor({20}, 61, 0.5, 2.0);
  std::vector<double> sum(20, 0.0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Rng rng(derive_seed(62, static_cast<std::uint64_t>(d)));
    auto y = dropout_forward(x, 0.5, Mode::Train, rng).output;
    for (std::size_t i = 0; i < 20; ++i) sum[i] += y[i];
  }
  for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(sum[i] / draws, x[i], 0.03 * x[i]);
}

TEST(Dropout, BackwardUsesMask) {
  auto x = random_tensor({50}, 63);
  Rng rng(64);
  auto r = dropout_forward(x, 0.7, Mode::Train, rng);
  auto w = random_tensor({50}, 65);
  auto g = dropout_backward(w, r.mask);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_TRUE(r.mask[i] == 0.0 || std::abs(r.mask[i] - 1.0 / 0.3) < 1e-12);
    EXPECT_DOUBLE_EQ(g[i], w[i] * r.mask[i]);
    EXPECT_DOUBLE_EQ(r.output[i], x[i] * r.mask[i]);
  }
}

TEST(Dropout, SameSeedSameMask) {
  auto x = random_tensor({100}, 66);
  Rng a(7), b(7);
  EXPECT_EQ(dropout_forward(x, 0.5, Mode::Train, a).output, dropout_forward(x, 0.5, Mode::Train, b).output);
}

TEST(FanIn, OrderedSum) {
  auto a = random_tensor({3, 4}, 70), b = random_tensor({3, 4}, 71), c = random_tensor({3, 4}, 72);
  const Tensor<double>* parts[] = {&a, &b, &c};
  auto s = accumulate_fanin<double>(parts);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i], (a[i] + b[i]) + c[i]);
  Tensor<double> bad({4, 3});
  const Tensor<double>* mixed[] = {&a, &bad};
  EXPECT_THROW(accumulate_fanin<double>(mixed), ShapeError);
}

TEST(Softmax, UniformLogits) {
  std::vector<double> z(10, 0.3);
  auto r = softmax_ce<double>(z, 4);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-12);
}

TEST(Softmax, ConfidentLogits) {
  std::vector<double> z(5, 0.0);
  z[2] = 30.0;
  auto r = softmax_ce<double>(z, 2);
  EXPECT_LT(r.loss, 1e-12);
  for (double g : r.grad_logits.values()) EXPECT_LT(std::abs(g), 1e-12);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  auto z = random_tensor({7}, 80, -3.0, 3.0);
  auto r = softmax_ce<double>(z.values(), 3);
  auto f = [&] { return softmax_ce<double>(z.values(), 3).loss; };
  double worst = 0.0;
  for (std::size_t i = 0; i < 7; ++i)
    worst = std::max(worst, wwcnn::testing::rel_error(r.grad_logits[i], wwcnn::testing::numeric_grad(f, z[i])));
  EXPECT_LT(worst, 1e-6);
}

TEST(Softmax, BatchProbabilitiesSumToOne) {
  auto z = random_tensor({6, 9}, 81, -3.0, 3.0);
  std::vector<std::size_t> y{0, 1, 2, 3, 4, 8};
  auto r = softmax_ce_batch(z, y);
  EXPECT_GE(r.loss, 0.0);
  for (std::size_t n = 0; n < 6; ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < 9; ++k) s += r.probabilities[n * 9 + k];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto g = softmax_ce_batch_backward(r.probabilities, y, 2.0);
  auto f = [&] { return 2.0 * softmax_ce_batch(z, y).loss; };
  EXPECT_LT(max_fd_error(f, z, g, 1e-4), 1e-6);
}

TEST(Softmax, InvalidLabelThrows) {
  auto z = random_tensor({2, 3}, 82);
  std::vector<std::size_t> y{0, 3};
  EXPECT_THROW(softmax_ce_batch(z, y), ConfigError);
}
