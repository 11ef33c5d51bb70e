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

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "wwcnn/graph.hpp"
#include "wwcnn/netspec.hpp"
#include "wwcnn/rng.hpp"
#include "wwcnn/synthdata.hpp"

namespace wwcnn {

/// Eq. L = L(object) + lambda * L(pose).
inline double combined_loss(double category_loss, double pose_loss, double lambda) {
  return category_loss + lambda * pose_loss;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.01;
  double lr_decay = 0.1;
  std::size_t lr_step = 0;  // epochs between decays; 0 means a third of `epochs`
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double dropout = 0.5;     // negative keeps the per-layer rates of the network description
  double lambda = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  double lr_at(std::size_t epoch) const;

  /// Starting rates per architecture: 0.01 / 0.5 for base and inject-top,
  /// 0.001 / 0.7 for inject-multi.
  static TrainConfig defaults_for(ArchKind kind);
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_cat_loss = 0.0;
  double train_pose_loss = 0.0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
  bool operator==(const EpochLog&) const = default;
};

/// Everything needed to continue a run: parameters, momentum buffers, the
/// next epoch, and the stream that seeds per-batch dropout.
template <typename T>
struct TrainState {
  ParamStore<T> params;
  std::vector<Tensor<T>> velocity;  // aligned with params; empty for non-trainable
  std::size_t epoch = 0;
  Rng rng;

  static TrainState start(ParamStore<T> params, std::uint64_t seed);
};

/// Sample order used for every epoch of a run.
std::vector<std::size_t> fixed_order(std::size_t n, std::uint64_t seed);

/// Parameter update v = mu v - lr (g + wd p); p += v.
template <typename T>
void sgd_step(ParamStore<T>& params, std::vector<Tensor<T>>& velocity, const Gradients<T>& grads,
              double lr, double momentum, double weight_decay);

template <typename T>
using EpochCallback = std::function<void(const EpochLog&, const TrainState<T>&)>;

/// Trains from state.epoch up to config.epochs. `test` may be null.
/// Throws NumericError naming the epoch and batch if the loss goes non-finite.
template <typename T>
std::vector<EpochLog> train(const Graph& graph, TrainState<T>& state, const Dataset& train_set,
                            const Dataset* test_set, const TrainConfig& config,
                            const EpochCallback<T>& on_epoch = {});

struct EvalReport {
  std::size_t samples = 0;
  double accuracy = 0.0;
  std::vector<double> class_ap;  // NaN for classes without positives
  double map = 0.0;              // mean over classes that have positives
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  bool has_pose = false;
  double pose_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_pose_accuracy;  // NaN for poses absent from the set
};

/// One-vs-rest average precision: mean over positives of the precision at
/// each positive's rank. Ranking is by descending score, ties by index.
double average_precision(std::span<const double> scores, std::span<const bool> positive);

/// Metrics from per-sample class scores (N x K, row-major).
EvalReport category_metrics(std::span<const double> scores, std::span<const std::size_t> labels,
                            std::size_t classes);

/// Eval-mode softmax probabilities of a head ("category" or the pose head) for every record.
template <typename T>
std::vector<double> predict_scores(const Graph& graph, const ParamStore<T>& params,
                                   const Dataset& data, bool pose_head = false,
                                   std::size_t batch_size = 256);

template <typename T>
EvalReport evaluate(const Graph& graph, const ParamStore<T>& params, const Dataset& data,
                    std::size_t batch_size = 256);

/// Top-1 category accuracy only.
template <typename T>
double accuracy(const Graph& graph, const ParamStore<T>& params, const Dataset& data,
                std::size_t batch_size = 256);

/// Name of the node producing the pose logits, or empty for a base graph.
std::string pose_logits_node(const Graph& graph);

}  // namespace wwcnn
