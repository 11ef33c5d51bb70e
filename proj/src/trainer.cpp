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

#include "wwcnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace wwcnn {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr decay must lie in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(dropout < 1.0)) throw ConfigError("dropout rate must be below 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be non-negative");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  const std::size_t step = lr_step ? lr_step : std::max<std::size_t>(1, epochs / 3);
  return lr * std::pow(lr_decay, static_cast<double>(epoch / step));
}

TrainConfig TrainConfig::defaults_for(ArchKind kind) {
  TrainConfig c;
  if (kind == ArchKind::InjectMulti) {
    c.lr = 0.001;
    c.dropout = 0.7;
  }
  return c;
}

template <typename T>
TrainState<T> TrainState<T>::start(ParamStore<T> params, std::uint64_t seed) {
  TrainState s;
  s.velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].trainable) s.velocity[i] = Tensor<T>(params[i].value.shape());
  s.params = std::move(params);
  s.rng = Rng(derive_seed(seed, "train"));
  return s;
}

std::vector<std::size_t> fixed_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "order"));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

template <typename T>
void sgd_step(ParamStore<T>& params, std::vector<Tensor<T>>& velocity, const Gradients<T>& grads,
              double lr, double momentum, double weight_decay) {
  const T mu = static_cast<T>(momentum), eta = static_cast<T>(lr), wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    auto& v = velocity[i];
    const auto& g = grads[i];
    if (v.shape() != p.value.shape()) v = Tensor<T>(p.value.shape());
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = mu * v[j] - eta * (g[j] + wd * p.value[j]);
      p.value[j] += v[j];
    }
  }
}

std::string pose_logits_node(const Graph& graph) {
  if (!graph.has_sink(kPoseSink)) return {};
  return graph.node(graph.node(graph.require(kPoseSink)).inputs.at(0)).name;
}

template <typename T>
std::vector<EpochLog> train(const Graph& graph, TrainState<T>& state, const Dataset& train_set,
                            const Dataset* test_set, const TrainConfig& config,
                            const EpochCallback<T>& on_epoch) {
  config.validate();
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  const auto& cat_node = graph.node(graph.require("category"));
  if (train_set.meta.categories > cat_node.shape[0])
    throw ConfigError("dataset has " + std::to_string(train_set.meta.categories) +
                      " categories but the category head has " + std::to_string(cat_node.shape[0]));
  const bool has_pose = graph.has_sink(kPoseSink);
  if (has_pose) {
    const auto& pose_node = graph.node(graph.require(pose_logits_node(graph)));
    if (train_set.meta.poses > pose_node.shape[0])
      throw ConfigError("dataset has " + std::to_string(train_set.meta.poses) +
                        " poses but the pose head has " + std::to_string(pose_node.shape[0]));
  }

  SinkWeights weights{{std::string(kCategorySink), 1.0}};
  if (has_pose) weights[std::string(kPoseSink)] = config.lambda;

  ForwardOptions fopt;
  fopt.mode = kernels::Mode::Train;
  if (config.dropout >= 0.0) fopt.dropout_rate = config.dropout;

  const auto order = fixed_order(train_set.size(), config.seed);
  std::vector<EpochLog> logs;
  for (std::size_t epoch = state.epoch; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    double sum_cat = 0.0, sum_pose = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto batch = make_batch<T>(train_set, idx, has_pose);
      fopt.seed = state.rng.next_u64();
      ActivationCache<T> cache;
      try {
        cache = forward(graph, state.params, batch, fopt);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      const double cat = cache.sink_values.at(std::string(kCategorySink));
      const double pose = has_pose ? cache.sink_values.at(std::string(kPoseSink)) : 0.0;
      if (!std::isfinite(combined_loss(cat, pose, config.lambda)))
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + ": non-finite loss");
      const auto grads = backward(graph, state.params, cache, weights);
      sgd_step(state.params, state.velocity, grads, lr, config.momentum, config.weight_decay);
      commit_running_stats(state.params, cache);
      sum_cat += cat * static_cast<double>(idx.size());
      sum_pose += pose * static_cast<double>(idx.size());
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_cat_loss = sum_cat / static_cast<double>(order.size());
    log.train_pose_loss = sum_pose / static_cast<double>(order.size());
    log.train_loss = combined_loss(log.train_cat_loss, log.train_pose_loss, has_pose ? config.lambda : 0.0);
    log.lr = lr;
    if (test_set) log.test_acc = accuracy(graph, state.params, *test_set);
    state.epoch = epoch + 1;
    logs.push_back(log);
    if (on_epoch) on_epoch(log, state);
  }
  return logs;
}

double average_precision(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ConfigError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!positive[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return hits ? sum / static_cast<double>(hits) : std::numeric_limits<double>::quiet_NaN();
}

EvalReport category_metrics(std::span<const double> scores, std::span<const std::size_t> labels,
                            std::size_t classes) {
  const std::size_t n = labels.size();
  if (n == 0) throw ConfigError("cannot evaluate an empty dataset");
  if (scores.size() != n * classes) throw ConfigError("score table does not match N x K");
  EvalReport r;
  r.samples = n;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw ConfigError("label outside the class range");
    const auto row = scores.subspan(i * classes, classes);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += pred == labels[i];
    ++r.confusion[labels[i]][pred];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  std::vector<double> column(n);
  auto positive = std::make_unique<bool[]>(n);
  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores[i * classes + c];
      positive[i] = labels[i] == c;
    }
    const double ap = average_precision(column, std::span<const bool>(positive.get(), n));
    r.class_ap.push_back(ap);
    if (!std::isnan(ap)) {
      ap_sum += ap;
      ++ap_count;
    }
  }
  r.map = ap_count ? ap_sum / static_cast<double>(ap_count) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

template <typename T>
std::vector<double> predict_scores(const Graph& graph, const ParamStore<T>& params, const Dataset& data,
                                   bool pose_head, std::size_t batch_size) {
  const std::string head = pose_head ? pose_logits_node(graph) : std::string("category");
  if (head.empty()) throw ConfigError("graph has no pose head");
  const std::size_t k = graph.node(graph.require(head)).shape[0];
  ForwardOptions fopt;
  fopt.mode = kernels::Mode::Eval;
  fopt.targets = {head};
  std::vector<double> scores;
  scores.reserve(data.size() * k);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(data, idx, false);
    const auto cache = forward(graph, params, batch, fopt);
    const auto& logits = cache.output(graph, head);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* row = logits.data() + i * k;
      const double mx = static_cast<double>(*std::max_element(row, row + k));
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
      for (std::size_t j = 0; j < k; ++j) scores.push_back(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
  }
  return scores;
}

template <typename T>
EvalReport evaluate(const Graph& graph, const ParamStore<T>& params, const Dataset& data,
                    std::size_t batch_size) {
  if (data.size() == 0) throw ConfigError("cannot evaluate an empty dataset");
  const std::size_t k = graph.node(graph.require("category")).shape[0];
  const auto scores = predict_scores(graph, params, data, false, batch_size);
  std::vector<std::size_t> labels;
  for (const auto& r : data.records) labels.push_back(r.category);
  auto report = category_metrics(scores, labels, k);

  if (!pose_logits_node(graph).empty()) {
    const std::size_t p = graph.node(graph.require(pose_logits_node(graph))).shape[0];
    const auto pose_scores = predict_scores(graph, params, data, true, batch_size);
    std::vector<std::size_t> hit(p, 0), total(p, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto* row = pose_scores.data() + i * p;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + p) - row);
      const auto truth = data.records[i].pose;
      if (truth >= p) throw ConfigError("pose label outside the pose head range");
      ++total[truth];
      hit[truth] += pred == truth;
      correct += pred == truth;
    }
    report.has_pose = true;
    report.pose_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    for (std::size_t j = 0; j < p; ++j)
      report.per_pose_accuracy.push_back(total[j] ? static_cast<double>(hit[j]) / static_cast<double>(total[j])
                                                  : std::numeric_limits<double>::quiet_NaN());
  }
  return report;
}

template <typename T>
double accuracy(const Graph& graph, const ParamStore<T>& params, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw ConfigError("cannot evaluate an empty dataset");
  const std::size_t k = graph.node(graph.require("category")).shape[0];
  const auto scores = predict_scores(graph, params, data, false, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double* row = scores.data() + i * k;
    correct += static_cast<std::size_t>(std::max_element(row, row + k) - row) == data.records[i].category;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

#define WWCNN_INSTANTIATE(T)                                                                      \
  template struct TrainState<T>;                                                                  \
  template void sgd_step(ParamStore<T>&, std::vector<Tensor<T>>&, const Gradients<T>&, double,   \
                         double, double);                                                         \
  template std::vector<EpochLog> train(const Graph&, TrainState<T>&, const Dataset&,              \
                                       const Dataset*, const TrainConfig&, const EpochCallback<T>&); \
  template std::vector<double> predict_scores(const Graph&, const ParamStore<T>&, const Dataset&, \
                                              bool, std::size_t);                                 \
  template EvalReport evaluate(const Graph&, const ParamStore<T>&, const Dataset&, std::size_t);  \
  template double accuracy(const Graph&, const ParamStore<T>&, const Dataset&, std::size_t);

WWCNN_INSTANTIATE(float)
WWCNN_INSTANTIATE(double)

#undef WWCNN_INSTANTIATE

}  // namespace wwcnn
