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

#include "wwcnn/graph.hpp"

#include <algorithm>
#include <span>

namespace wwcnn {

namespace {

using kernels::Mode;

ShapeError node_error(const OpNode& n, const std::string& what) {
  return ShapeError("node '" + n.name + "' (" + std::string(op_name(n.kind)) + "): " + what);
}

template <typename T>
void add_into(Tensor<T>& dst, Tensor<T>&& contribution) {
  if (dst.empty()) {
    dst = std::move(contribution);
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += contribution[i];
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& contribution) {
  if (dst.empty()) {
    dst = contribution;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += contribution[i];
}

template <typename T>
Tensor<T> batched(const Tensor<T>& t, std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  if (t.shape() == s) return t;
  return t.reshaped(std::move(s));
}

const Tensor<float> kNoBiasF;
const Tensor<double> kNoBiasD;
template <typename T>
const Tensor<T>& no_bias() {
  if constexpr (std::is_same_v<T, float>) return kNoBiasF;
  else return kNoBiasD;
}

}  // namespace

std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Conv: return "conv";
    case OpKind::Pool: return "pool";
    case OpKind::BatchNorm: return "bn";
    case OpKind::Relu: return "relu";
    case OpKind::Fc: return "fc";
    case OpKind::Dropout: return "dropout";
    case OpKind::Add: return "add";
    case OpKind::SoftmaxLoss: return "softmax_loss";
  }
  return "?";
}

Graph::Graph(Shape input_shape) {
  if (input_shape.size() != 3) throw ShapeError("graph input must be C x H x W");
  for (auto d : input_shape)
    if (d == 0) throw ShapeError("graph input dimensions must be positive");
  OpNode in;
  in.name = "data";
  in.kind = OpKind::Input;
  in.shape = std::move(input_shape);
  index_.emplace(in.name, 0);
  nodes_.push_back(std::move(in));
}

std::size_t Graph::add(OpNode node) {
  if (nodes_.empty()) throw ShapeError("graph has no input node");
  if (node.kind == OpKind::Input) throw node_error(node, "only one input node is allowed");
  if (index_.count(node.name)) throw node_error(node, "duplicate node name");
  for (auto i : node.inputs)
    if (i >= nodes_.size()) throw node_error(node, "input id " + std::to_string(i) + " does not exist");
  node.shape = infer_shape(node);
  index_.emplace(node.name, nodes_.size());
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

Shape Graph::infer_shape(const OpNode& n) const {
  const std::size_t want = n.kind == OpKind::Add ? n.inputs.size() : 1;
  if (n.inputs.empty() || n.inputs.size() != want)
    throw node_error(n, "expects " + std::string(n.kind == OpKind::Add ? "at least one input" : "one input"));
  const Shape& in = nodes_[n.inputs[0]].shape;
  switch (n.kind) {
    case OpKind::Conv:
      if (in.size() != 3) throw node_error(n, "needs a C x H x W input, got " + shape_str(in));
      if (n.out == 0 || n.kernel == 0) throw node_error(n, "out and kernel must be positive");
      try {
        return {n.out, kernels::conv_out_dim(in[1], n.kernel, n.stride, n.pad),
                kernels::conv_out_dim(in[2], n.kernel, n.stride, n.pad)};
      } catch (const ShapeError& e) {
        throw node_error(n, e.what());
      }
    case OpKind::Pool:
      if (in.size() != 3) throw node_error(n, "needs a C x H x W input, got " + shape_str(in));
      try {
        return {in[0], kernels::pool_out_dim(in[1], n.kernel, n.stride),
                kernels::pool_out_dim(in[2], n.kernel, n.stride)};
      } catch (const ShapeError& e) {
        throw node_error(n, e.what());
      }
    case OpKind::BatchNorm:
    case OpKind::Relu:
    case OpKind::Dropout:
      return in;
    case OpKind::Fc:
      if (n.out == 0) throw node_error(n, "out must be positive");
      return {n.out};
    case OpKind::Add:
      for (auto i : n.inputs)
        if (nodes_[i].shape != in)
          throw node_error(n, "fan-in shapes differ: " + shape_str(in) + " vs " +
                                  shape_str(nodes_[i].shape) + " from '" + nodes_[i].name + "'");
      return in;
    case OpKind::SoftmaxLoss:
      if (in.size() != 1 || in[0] < 2) throw node_error(n, "needs a logit vector of width >= 2");
      return {1};
    case OpKind::Input:
      break;
  }
  throw node_error(n, "unsupported op");
}

std::optional<std::size_t> Graph::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Graph::require(std::string_view name) const {
  auto id = find(name);
  if (!id) throw ConfigError("graph has no node named '" + std::string(name) + "'");
  return *id;
}

std::vector<std::size_t> Graph::sinks() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::SoftmaxLoss) out.push_back(i);
  return out;
}

bool Graph::has_sink(std::string_view name) const {
  auto id = find(name);
  return id && nodes_[*id].kind == OpKind::SoftmaxLoss;
}

std::vector<bool> Graph::ancestors(const std::vector<std::size_t>& targets) const {
  std::vector<bool> keep(nodes_.size(), false);
  for (auto t : targets) keep.at(t) = true;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!keep[i]) continue;
    for (auto j : nodes_[i].inputs) keep[j] = true;
  }
  return keep;
}

Graph Graph::subgraph(const std::vector<bool>& keep) const {
  if (keep.size() != nodes_.size() || !keep[0])
    throw ConfigError("subgraph mask must cover every node and keep the input");
  Graph g;
  std::vector<std::size_t> remap(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!keep[i]) continue;
    OpNode n = nodes_[i];
    for (auto& in : n.inputs) {
      if (!keep[in]) throw ConfigError("subgraph drops '" + nodes_[in].name + "' needed by '" + n.name + "'");
      in = remap[in];
    }
    remap[i] = g.nodes_.size();
    g.index_.emplace(n.name, g.nodes_.size());
    g.nodes_.push_back(std::move(n));
  }
  return g;
}

std::vector<std::string> Graph::param_names() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) out.insert(out.end(), n.params.begin(), n.params.end());
  return out;
}

void Graph::validate() const {
  std::vector<bool> reach(nodes_.size(), false);
  reach[0] = true;
  for (std::size_t i = 1; i < nodes_.size(); ++i)
    for (auto j : nodes_[i].inputs) reach[i] = reach[i] || reach[j];
  for (auto s : sinks())
    if (!reach[s]) throw ConfigError("sink '" + nodes_[s].name + "' is not reachable from the input");
  if (sinks().empty()) throw ConfigError("graph has no loss sink");
}

template <typename T>
const Tensor<T>& ActivationCache<T>::output(const Graph& g, std::string_view name) const {
  const auto id = g.require(name);
  if (id >= nodes.size() || !nodes[id].computed)
    throw ConfigError("node '" + std::string(name) + "' was not computed in this forward pass");
  return nodes[id].output;
}

template <typename T>
ActivationCache<T> forward(const Graph& graph, const ParamStore<T>& params, const Batch<T>& batch,
                           const ForwardOptions& options) {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeError("forward on an empty batch");
  {
    Shape want{n};
    want.insert(want.end(), graph.input_shape().begin(), graph.input_shape().end());
    if (batch.images.shape() != want)
      throw ShapeError("input batch " + shape_str(batch.images.shape()) + " does not match graph input " +
                       shape_str(want));
  }
  if (batch.category.size() != n && !batch.category.empty())
    throw ShapeError("category labels do not match batch size");
  if (batch.pose.size() != n && !batch.pose.empty())
    throw ShapeError("pose labels do not match batch size");

  std::vector<bool> needed(graph.size(), true);
  if (!options.targets.empty()) {
    std::vector<std::size_t> ids;
    for (const auto& t : options.targets) ids.push_back(graph.require(t));
    needed = graph.ancestors(ids);
  }

  ActivationCache<T> cache;
  cache.mode = options.mode;
  cache.nodes.resize(graph.size());
  cache.category = batch.category;
  cache.pose = batch.pose;

  auto param = [&](const OpNode& node, std::size_t k) -> const Tensor<T>& {
    if (k >= node.params.size()) return no_bias<T>();
    auto idx = params.index_of(node.params[k]);
    if (!idx) throw ConfigError("node '" + node.name + "': missing parameter '" + node.params[k] + "'");
    return params[*idx].value;
  };

  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (!needed[i]) continue;
    const OpNode& node = graph.node(i);
    auto& nc = cache.nodes[i];
    auto in = [&](std::size_t k) -> const Tensor<T>& { return cache.nodes[node.inputs[k]].output; };
    try {
      switch (node.kind) {
        case OpKind::Input:
          nc.output = batch.images;
          break;
        case OpKind::Conv:
          nc.output = kernels::conv2d_forward(in(0), param(node, 0), param(node, 1), node.stride, node.pad);
          break;
        case OpKind::Pool: {
          auto r = kernels::maxpool_forward(in(0), node.kernel, node.stride);
          nc.output = std::move(r.output);
          nc.switches = std::move(r.switches);
          break;
        }
        case OpKind::BatchNorm: {
          kernels::BatchNormState<T> st{param(node, 2), param(node, 3)};
          auto r = kernels::batchnorm_forward(in(0), param(node, 0), param(node, 1), options.mode, st);
          nc.output = std::move(r.output);
          nc.normalized = std::move(r.normalized);
          nc.inv_std = std::move(r.inv_std);
          if (options.mode == Mode::Train) {
            cache.running_updates[node.params[2]] = std::move(r.updated.running_mean);
            cache.running_updates[node.params[3]] = std::move(r.updated.running_var);
          }
          break;
        }
        case OpKind::Relu:
          nc.output = kernels::relu_forward(in(0));
          break;
        case OpKind::Dropout: {
          Rng rng(derive_seed(options.seed, node.name));
          auto r = kernels::dropout_forward(in(0), options.dropout_rate.value_or(node.rate),
                                            options.mode, rng);
          nc.output = std::move(r.output);
          nc.mask = std::move(r.mask);
          break;
        }
        case OpKind::Fc:
          nc.output = kernels::fc_forward(in(0), param(node, 0), param(node, 1));
          break;
        case OpKind::Add: {
          std::vector<const Tensor<T>*> parts;
          for (std::size_t k = 0; k < node.inputs.size(); ++k) parts.push_back(&in(k));
          nc.output = kernels::accumulate_fanin<T>(parts);
          break;
        }
        case OpKind::SoftmaxLoss: {
          const auto& labels = node.label == LabelKind::Category ? batch.category : batch.pose;
          if (labels.empty()) continue;  // no labels: the sink is not evaluated
          auto r = kernels::softmax_ce_batch(in(0), labels);
          nc.output = Tensor<T>({1}, static_cast<T>(r.loss));
          nc.probabilities = std::move(r.probabilities);
          cache.sink_values[node.name] = r.loss;
          break;
        }
      }
    } catch (const NumericError&) {
      throw;
    } catch (const Error& e) {
      throw ShapeError("node '" + node.name + "': " + e.what());
    }
    if (node.kind != OpKind::SoftmaxLoss && node.kind != OpKind::Input)
      nc.output = batched(nc.output, n, node.shape);
    if (options.check_finite) nc.output.check_finite("node '" + node.name + "'");
    nc.computed = true;
  }
  return cache;
}

template <typename T>
Gradients<T> backward(const Graph& graph, const ParamStore<T>& params,
                      const ActivationCache<T>& cache, const SinkWeights& weights) {
  if (cache.nodes.size() != graph.size()) throw ConfigError("activation cache does not match graph");
  for (const auto& [name, w] : weights) {
    if (!graph.has_sink(name)) throw ConfigError("unknown sink '" + name + "'");
    if (w != 0.0 && !cache.sink_values.count(name))
      throw ConfigError("sink '" + name + "' was not evaluated in the forward pass");
  }

  Gradients<T> grads;
  grads.values.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].trainable) grads.values[i] = Tensor<T>(params[i].value.shape());

  auto add_param_grad = [&](const OpNode& node, std::size_t k, Tensor<T>&& g) {
    auto idx = params.index_of(node.params.at(k));
    if (!idx) throw ConfigError("node '" + node.name + "': missing parameter '" + node.params[k] + "'");
    if (!params[*idx].trainable) return;
    auto& dst = grads.values[*idx];
    const auto& shape = dst.shape();
    add_into(dst, g.reshaped(shape));
  };

  std::vector<Tensor<T>> node_grad(graph.size());
  for (std::size_t i = graph.size(); i-- > 1;) {
    const OpNode& node = graph.node(i);
    const auto& nc = cache.nodes[i];
    if (!nc.computed) continue;
    const bool input_is_data = !node.inputs.empty() && node.inputs[0] == 0;

    if (node.kind == OpKind::SoftmaxLoss) {
      auto it = weights.find(node.name);
      if (it == weights.end() || it->second == 0.0) continue;
      const auto& labels = node.label == LabelKind::Category ? cache.category : cache.pose;
      add_into(node_grad[node.inputs[0]],
               kernels::softmax_ce_batch_backward(nc.probabilities, labels, it->second));
      continue;
    }
    if (node_grad[i].empty()) continue;
    Tensor<T> g = std::move(node_grad[i]);
    const auto& in0 = cache.nodes[node.inputs[0]].output;

    switch (node.kind) {
      case OpKind::Conv: {
        auto r = kernels::conv2d_backward(g, in0, params.at(node.params[0]).value, node.stride,
                                          node.pad, !input_is_data);
        add_param_grad(node, 0, std::move(r.kernels));
        if (node.params.size() > 1) add_param_grad(node, 1, std::move(r.bias));
        if (!input_is_data) add_into(node_grad[node.inputs[0]], std::move(r.input));
        break;
      }
      case OpKind::Pool:
        if (!input_is_data)
          add_into(node_grad[node.inputs[0]], kernels::maxpool_backward(g, nc.switches, in0.shape()));
        break;
      case OpKind::BatchNorm: {
        auto r = kernels::batchnorm_backward(g, nc.normalized, nc.inv_std,
                                             params.at(node.params[0]).value, cache.mode);
        add_param_grad(node, 0, std::move(r.gamma));
        add_param_grad(node, 1, std::move(r.beta));
        if (!input_is_data) add_into(node_grad[node.inputs[0]], std::move(r.input));
        break;
      }
      case OpKind::Relu:
        if (!input_is_data) add_into(node_grad[node.inputs[0]], kernels::relu_backward(g, nc.output));
        break;
      case OpKind::Dropout:
        if (!input_is_data) add_into(node_grad[node.inputs[0]], kernels::dropout_backward(g, nc.mask));
        break;
      case OpKind::Fc: {
        const bool has_bias = node.params.size() > 1;
        auto r = kernels::fc_backward(g, in0, params.at(node.params[0]).value, has_bias, !input_is_data);
        add_param_grad(node, 0, std::move(r.weights));
        if (has_bias) add_param_grad(node, 1, std::move(r.bias));
        if (!input_is_data) add_into(node_grad[node.inputs[0]], r.input.reshaped(in0.shape()));
        break;
      }
      case OpKind::Add:
        for (auto j : node.inputs)
          if (j != 0) add_into(node_grad[j], g);
        break;
      case OpKind::Input:
      case OpKind::SoftmaxLoss:
        break;
    }
  }
  return grads;
}

template <typename T>
void commit_running_stats(ParamStore<T>& params, const ActivationCache<T>& cache) {
  for (const auto& [name, value] : cache.running_updates) params.at(name).value = value;
}

#define WWCNN_INSTANTIATE(T)                                                                    \
  template struct ActivationCache<T>;                                                           \
  template ActivationCache<T> forward(const Graph&, const ParamStore<T>&, const Batch<T>&,      \
                                      const ForwardOptions&);                                   \
  template Gradients<T> backward(const Graph&, const ParamStore<T>&, const ActivationCache<T>&, \
                                 const SinkWeights&);                                           \
  template void commit_running_stats(ParamStore<T>&, const ActivationCache<T>&);

WWCNN_INSTANTIATE(float)
WWCNN_INSTANTIATE(double)

#undef WWCNN_INSTANTIATE

}  // namespace wwcnn
