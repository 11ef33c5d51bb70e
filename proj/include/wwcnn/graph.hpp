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

// Multi-sink differentiable DAG. Nodes are stored in topological order
// (every input precedes its consumer), so forward runs front to back and
// backward back to front, each node visited at most once.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wwcnn/kernels.hpp"
#include "wwcnn/params.hpp"
#include "wwcnn/tensor.hpp"

namespace wwcnn {

enum class OpKind : std::uint8_t { Input, Conv, Pool, BatchNorm, Relu, Fc, Dropout, Add, SoftmaxLoss };
enum class LabelKind : std::uint8_t { Category, Pose };

std::string_view op_name(OpKind k);

struct OpNode {
  std::string name;
  OpKind kind = OpKind::Input;
  std::vector<std::size_t> inputs;
  // Conv/Fc: weight then optional bias. BatchNorm: gamma, beta, running_mean, running_var.
  std::vector<std::string> params;
  std::size_t out = 0;  // conv channels / fc features
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  double rate = 0.0;  // dropout
  LabelKind label = LabelKind::Category;
  Shape shape;  // per-sample output shape, filled in by Graph::add

  bool operator==(const OpNode&) const = default;
};

inline constexpr std::string_view kCategorySink = "category_loss";
inline constexpr std::string_view kPoseSink = "pose_loss";

class Graph {
 public:
  Graph() = default;
  /// Creates the graph with its input node "data" of per-sample shape C x H x W.
  explicit Graph(Shape input_shape);

  /// Appends a node after inferring its output shape. Inputs must already
  /// exist, which keeps the node list topologically ordered and acyclic.
  std::size_t add(OpNode node);

  const std::vector<OpNode>& nodes() const { return nodes_; }
  const OpNode& node(std::size_t i) const { return nodes_.at(i); }
  std::size_t size() const { return nodes_.size(); }
  const Shape& input_shape() const { return nodes_.front().shape; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t require(std::string_view name) const;

  /// Ids of the SoftmaxLoss nodes, which are the graph's sinks.
  std::vector<std::size_t> sinks() const;
  bool has_sink(std::string_view name) const;

  /// Mask of nodes that `targets` depend on, the targets included.
  std::vector<bool> ancestors(const std::vector<std::size_t>& targets) const;

  /// Copy holding only the masked nodes, reindexed in the original order.
  Graph subgraph(const std::vector<bool>& keep) const;

  /// Names of all parameters referenced by nodes, in node order.
  std::vector<std::string> param_names() const;

  /// Checks every sink is reachable from the input node.
  void validate() const;

  bool operator==(const Graph&) const = default;

 private:
  Shape infer_shape(const OpNode& node) const;

  std::vector<OpNode> nodes_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

template <typename T>
struct Batch {
  Tensor<T> images;  // N x C x H x W
  std::vector<std::size_t> category;
  std::vector<std::size_t> pose;  // may be empty
  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
};

struct ForwardOptions {
  kernels::Mode mode = kernels::Mode::Eval;
  std::uint64_t seed = 0;  // dropout masks are drawn from derive_seed(seed, node name)
  std::optional<double> dropout_rate;  // overrides every dropout node's rate
  std::vector<std::string> targets;    // compute only what these need; empty = all
  bool check_finite = true;
};

template <typename T>
struct NodeCache {
  bool computed = false;
  Tensor<T> output;  // N x shape
  kernels::PoolSwitches switches;
  Tensor<T> normalized;
  Tensor<T> inv_std;
  Tensor<T> mask;
  Tensor<T> probabilities;
};

template <typename T>
struct ActivationCache {
  kernels::Mode mode = kernels::Mode::Eval;
  std::vector<NodeCache<T>> nodes;
  std::vector<std::size_t> category;
  std::vector<std::size_t> pose;
  std::map<std::string, double> sink_values;
  // Train-mode batch-norm running statistics to commit after the step.
  std::map<std::string, Tensor<T>> running_updates;

  const Tensor<T>& output(const Graph& g, std::string_view name) const;
};

/// Sink name -> weight. The backward pass differentiates sum_s w_s * sink_s.
using SinkWeights = std::map<std::string, double, std::less<>>;

/// Gradients aligned with the ParamStore's indices. Non-trainable entries
/// are empty; trainable ones are zero unless reached by the reverse pass.
template <typename T>
struct Gradients {
  std::vector<Tensor<T>> values;
  const Tensor<T>& operator[](std::size_t i) const { return values[i]; }
  Tensor<T>& operator[](std::size_t i) { return values[i]; }
};

template <typename T>
ActivationCache<T> forward(const Graph& graph, const ParamStore<T>& params, const Batch<T>& batch,
                           const ForwardOptions& options);

template <typename T>
Gradients<T> backward(const Graph& graph, const ParamStore<T>& params,
                      const ActivationCache<T>& cache, const SinkWeights& weights);

/// Writes the cache's running statistics into `params`.
template <typename T>
void commit_running_stats(ParamStore<T>& params, const ActivationCache<T>& cache);

}  // namespace wwcnn
