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

#include "wwcnn/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace wwcnn {

// ---------------------------------------------------------------- gradient probe

double GradProbeReport::rms(double norm, std::size_t count) {
  return count ? norm / std::sqrt(static_cast<double>(count)) : 0.0;
}

template <typename T>
std::vector<Batch<T>> probe_batches(const Dataset& data, std::size_t count, std::size_t batch_size,
                                    std::uint64_t seed) {
  if (count == 0 || batch_size == 0) throw ConfigError("probe needs at least one non-empty batch");
  if (count * batch_size > data.size())
    throw ConfigError("probe wants " + std::to_string(count * batch_size) + " samples but the set has " +
                      std::to_string(data.size()));
  const auto order = fixed_order(data.size(), derive_seed(seed, "probe"));
  std::vector<Batch<T>> out;
  for (std::size_t b = 0; b < count; ++b) {
    std::span<const std::size_t> idx(order.data() + b * batch_size, batch_size);
    out.push_back(make_batch<T>(data, idx, true));
  }
  return out;
}

template <typename T>
GradProbeReport gradient_probe(const Graph& graph, const ParamStore<T>& params,
                               const std::vector<Batch<T>>& batches, const SinkWeights& weights) {
  if (batches.empty()) throw ConfigError("probe needs at least one batch");
  GradProbeReport r;
  r.batches = batches.size();
  r.shared_count = params.scalar_count(Partition::Shared);
  r.category_count = params.scalar_count(Partition::CategoryHead);
  r.pose_count = params.scalar_count(Partition::PoseHead) + params.scalar_count(Partition::PoseBranch);

  // Sinks absent from the graph (e.g. pose on a base net) contribute nothing.
  SinkWeights total;
  for (const auto& [name, w] : weights)
    if (graph.has_sink(name)) total[name] = w;
  const SinkWeights category_only{{std::string(kCategorySink), 1.0}};

  ForwardOptions fopt;
  fopt.mode = kernels::Mode::Eval;
  fopt.dropout_rate = 0.0;
  for (const auto& batch : batches) {
    Batch<T> b = batch;
    if (!graph.has_sink(kPoseSink)) b.pose.clear();
    const auto cache = forward(graph, params, b, fopt);
    const auto g_cat = backward(graph, params, cache, category_only);
    const auto g_tot = backward(graph, params, cache, total);
    double cs = 0, ch = 0, ts = 0, tc = 0, tp = 0, ps = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      const auto& a = g_cat[i];
      const auto& t = g_tot[i];
      double sa = 0, st = 0, sd = 0;
      for (std::size_t j = 0; j < a.size(); ++j) {
        sa += static_cast<double>(a[j]) * a[j];
        st += static_cast<double>(t[j]) * t[j];
        const double d = static_cast<double>(t[j]) - a[j];
        sd += d * d;
      }
      switch (params[i].partition) {
        case Partition::Shared:
          cs += sa;
          ts += st;
          ps += sd;
          break;
        case Partition::CategoryHead:
          ch += sa;
          tc += st;
          break;
        case Partition::PoseHead:
        case Partition::PoseBranch:
          tp += st;
          break;
      }
    }
    r.category_shared += std::sqrt(cs);
    r.category_head += std::sqrt(ch);
    r.total_shared += std::sqrt(ts);
    r.total_category += std::sqrt(tc);
    r.total_pose += std::sqrt(tp);
    r.pose_induced_shared += std::sqrt(ps);
  }
  const double n = static_cast<double>(batches.size());
  for (double* v : {&r.category_shared, &r.category_head, &r.total_shared, &r.total_category,
                    &r.total_pose, &r.pose_induced_shared})
    *v /= n;
  return r;
}

bool near_converged(const GradProbeReport& probe, const std::vector<EpochLog>& logs) {
  if (probe.shared_count > 0 && probe.total_shared / static_cast<double>(probe.shared_count) < 1e-4) return true;
  if (logs.size() >= 4) {
    const double now = logs.back().train_loss;
    const double before = logs[logs.size() - 4].train_loss;
    if (std::abs(now - before) < 1e-4) return true;
  }
  return false;
}

// ---------------------------------------------------------------- entropy

std::size_t UnitEntropyTable::dead_count() const {
  return static_cast<std::size_t>(std::count_if(units.begin(), units.end(), [](const auto& u) { return u.dead; }));
}

double entropy_bits(std::span<const double> mass) {
  double total = 0.0;
  for (double m : mass) {
    if (m < 0.0) throw ConfigError("entropy of a negative mass");
    total += m;
  }
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double m : mass) {
    if (m <= 0.0) continue;
    const double p = m / total;
    h -= p * std::log2(p);
  }
  return std::max(0.0, h);
}

UnitEntropyTable unit_entropy_table(std::span<const double> responses, std::size_t units,
                                    std::span<const std::size_t> category, std::size_t categories,
                                    std::span<const std::size_t> pose, std::size_t poses,
                                    std::string layer) {
  const std::size_t n = category.size();
  if (units == 0 || responses.size() != n * units) throw ConfigError("response table does not match N x U");
  if (pose.size() != n) throw ConfigError("pose labels do not match the response table");
  UnitEntropyTable t{std::move(layer), categories, poses, {}};
  std::vector<double> by_cat(categories), by_pose(poses);
  for (std::size_t u = 0; u < units; ++u) {
    std::fill(by_cat.begin(), by_cat.end(), 0.0);
    std::fill(by_pose.begin(), by_pose.end(), 0.0);
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = responses[i * units + u];
      if (a < 0.0)
        throw ConfigError("layer '" + t.layer + "' has negative activations; probe a rectified layer");
      if (category[i] >= categories || pose[i] >= poses) throw ConfigError("label outside the class range");
      by_cat[category[i]] += a;
      by_pose[pose[i]] += a;
      mass += a;
    }
    UnitEntropy e;
    e.mass = mass;
    e.dead = mass < kDeadMass;
    if (!e.dead) {
      e.e_obj = entropy_bits(by_cat);
      e.e_pos = entropy_bits(by_pose);
    }
    t.units.push_back(e);
  }
  return t;
}

template <typename T>
std::vector<double> layer_responses(const Graph& graph, const ParamStore<T>& params,
                                    const std::string& layer, const Dataset& data, Reduce reduce,
                                    std::size_t* units_out, std::size_t batch_size) {
  if (data.size() == 0) throw ConfigError("no samples to probe");
  const auto& node = graph.node(graph.require(layer));
  if (node.kind == OpKind::SoftmaxLoss || node.kind == OpKind::Input)
    throw ConfigError("layer '" + layer + "' has no unit activations");
  const std::size_t units = node.shape[0];
  const std::size_t spatial = shape_size(node.shape) / units;
  ForwardOptions fopt;
  fopt.mode = kernels::Mode::Eval;
  fopt.targets = {layer};
  std::vector<double> out;
  out.reserve(data.size() * units);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto cache = forward(graph, params, make_batch<T>(data, idx, false), fopt);
    const auto& act = cache.output(graph, layer);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t u = 0; u < units; ++u) {
        const T* v = act.data() + (i * units + u) * spatial;
        double r;
        if (reduce == Reduce::Max) {
          r = static_cast<double>(*std::max_element(v, v + spatial));
        } else {
          double s = 0.0;
          for (std::size_t j = 0; j < spatial; ++j) s += v[j];
          r = s / static_cast<double>(spatial);
        }
        out.push_back(r);
      }
    }
  }
  if (units_out) *units_out = units;
  return out;
}

template <typename T>
UnitEntropyTable unit_entropy(const Graph& graph, const ParamStore<T>& params, const std::string& layer,
                              const Dataset& data) {
  std::size_t units = 0;
  const auto responses = layer_responses(graph, params, layer, data, Reduce::Mean, &units);
  std::vector<std::size_t> cat, pose;
  for (const auto& r : data.records) {
    cat.push_back(r.category);
    pose.push_back(r.pose);
  }
  return unit_entropy_table(responses, units, cat, data.meta.categories, pose, data.meta.poses, layer);
}

double decoupleness(const UnitEntropyTable& table) {
  std::vector<double> a, b;
  for (const auto& u : table.units) {
    if (u.dead) continue;
    a.push_back(u.e_obj);
    b.push_back(u.e_pos);
  }
  if (a.size() < 2)
    throw NumericError("decouple-ness of '" + table.layer + "' is undefined: fewer than two live units");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0)
    throw NumericError("decouple-ness of '" + table.layer + "' is undefined: zero-variance entropy vector");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------- receptive fields

std::vector<RfUnit> rf_average_from_responses(std::span<const double> responses, std::size_t units,
                                              const Dataset& data, std::size_t k) {
  const std::size_t n = data.size();
  if (k == 0 || k > n) throw ConfigError("k must lie in [1, " + std::to_string(n) + "]");
  if (responses.size() != n * units) throw ConfigError("response table does not match N x U");
  const std::size_t pixels = data.meta.pixels();
  std::vector<RfUnit> out(units);
  std::vector<std::size_t> order(n);
  for (std::size_t u = 0; u < units; ++u) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    bool dead = true;
    for (std::size_t i = 0; i < n; ++i) dead = dead && responses[i * units + u] == 0.0;
    if (!dead) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return responses[a * units + u] > responses[b * units + u];
      });
    }
    auto& unit = out[u];
    unit.dead = dead;
    unit.top.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    unit.image.assign(pixels, 0.0);
    for (auto i : unit.top) {
      const auto& img = data.records[i].image;
      for (std::size_t p = 0; p < pixels; ++p) unit.image[p] += img[p];
    }
    for (auto& v : unit.image) v /= static_cast<double>(k);
  }
  return out;
}

template <typename T>
std::vector<RfUnit> rf_average(const Graph& graph, const ParamStore<T>& params, const std::string& layer,
                               const Dataset& data, std::size_t k) {
  std::size_t units = 0;
  const auto responses = layer_responses(graph, params, layer, data, Reduce::Max, &units);
  return rf_average_from_responses(responses, units, data, k);
}

// ---------------------------------------------------------------- projection

Projection project_2d(std::span<const double> features, std::size_t dims) {
  if (dims < 2) throw ConfigError("projection needs feature dimension >= 2");
  if (features.size() % dims) throw ConfigError("feature table is not N x D");
  const std::size_t n = features.size() / dims;
  if (n < 3) throw ConfigError("projection needs at least 3 samples");
  using Mat = Eigen::MatrixXd;
  Mat X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      features.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Mat cov = X.transpose() * X / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
  const auto& values = eig.eigenvalues();  // ascending
  const Eigen::Index d = static_cast<Eigen::Index>(dims);
  const double scale = std::max(1.0, std::abs(values(d - 1)));
  std::size_t positive = 0;
  for (Eigen::Index i = 0; i < d; ++i) positive += values(i) > 1e-12 * scale;
  if (positive < 2) throw NumericError("covariance has fewer than two positive eigenvalues");

  Projection p;
  for (Eigen::Index i = d - 1; i >= 0; --i) p.eigenvalues.push_back(std::max(0.0, values(i)));
  Mat axes(d, 2);
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - j);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < d; ++i)
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    if (v(arg) < 0) v = -v;
    axes.col(j) = v;
    p.axes[static_cast<std::size_t>(j)].assign(v.data(), v.data() + d);
  }
  const Mat Y = X * axes;
  p.coords.resize(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    p.coords[i * 2] = Y(static_cast<Eigen::Index>(i), 0);
    p.coords[i * 2 + 1] = Y(static_cast<Eigen::Index>(i), 1);
  }
  return p;
}

// ---------------------------------------------------------------- warm start

template <typename T>
WarmstartResult warmstart_experiment(const NetworkSpec& spec, const Dataset& train_set,
                                     const Dataset& test_set, const WarmstartConfig& config) {
  WarmstartResult result;
  auto continue_run = [&](const Network<T>& net, ParamStore<T> params, const TrainConfig& cfg) {
    WarmstartCurve curve;
    curve.initial_error = 1.0 - accuracy(net.graph, params, test_set);
    auto state = TrainState<T>::start(std::move(params), cfg.seed);
    for (const auto& log : train(net.graph, state, train_set, &test_set, cfg))
      curve.test_error.push_back(1.0 - log.test_acc);
    return curve;
  };

  // (a) base first, then the multi-injection net from its weights.
  {
    auto base = build<T>(spec, ArchKind::Base, config.seed);
    auto state = TrainState<T>::start(base.params, config.base_pretrain.seed);
    train(base.graph, state, train_set, nullptr, config.base_pretrain);
    auto multi = build<T>(spec, ArchKind::InjectMulti, config.seed);
    transplant(state.params, multi.params, derive_seed(config.seed, "fresh"));
    result.base_to_multi = continue_run(multi, multi.params, config.multi_continue);
  }
  // (b) the reverse.
  {
    auto multi = build<T>(spec, ArchKind::InjectMulti, config.seed);
    auto state = TrainState<T>::start(multi.params, config.multi_pretrain.seed);
    train(multi.graph, state, train_set, nullptr, config.multi_pretrain);
    auto base = build<T>(spec, ArchKind::Base, config.seed);
    transplant(state.params, base.params, derive_seed(config.seed, "fresh"));
    result.multi_to_base = continue_run(base, base.params, config.base_continue);
  }
  return result;
}

#define WWCNN_INSTANTIATE(T)                                                                         \
  template std::vector<Batch<T>> probe_batches(const Dataset&, std::size_t, std::size_t, std::uint64_t); \
  template GradProbeReport gradient_probe(const Graph&, const ParamStore<T>&,                        \
                                          const std::vector<Batch<T>>&, const SinkWeights&);         \
  template std::vector<double> layer_responses(const Graph&, const ParamStore<T>&,                   \
                                               const std::string&, const Dataset&, Reduce,           \
                                               std::size_t*, std::size_t);                           \
  template UnitEntropyTable unit_entropy(const Graph&, const ParamStore<T>&, const std::string&,      \
                                         const Dataset&);                                            \
  template std::vector<RfUnit> rf_average(const Graph&, const ParamStore<T>&, const std::string&,    \
                                          const Dataset&, std::size_t);                              \
  template WarmstartResult warmstart_experiment<T>(const NetworkSpec&, const Dataset&,               \
                                                   const Dataset&, const WarmstartConfig&);

WWCNN_INSTANTIATE(float)
WWCNN_INSTANTIATE(double)

#undef WWCNN_INSTANTIATE

}  // namespace wwcnn
