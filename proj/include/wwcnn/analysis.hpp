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

// Diagnostics over trained networks: gradient norms per parameter
// partition, per-unit category/pose entropies and their correlation,
// top-k receptive-field averages, a PCA projection of features, and the
// warm-start experiment between the base and multi-injection networks.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wwcnn/graph.hpp"
#include "wwcnn/netspec.hpp"
#include "wwcnn/synthdata.hpp"
#include "wwcnn/trainer.hpp"

namespace wwcnn {

// ---------------------------------------------------------------- gradient probe

/// Mean L2 gradient norms over the probe batches. "category" is the
/// category-only loss L; "total" is the weighted loss of the probe's sink
/// weights. shared = omega1, category = omega2, pose = omega3.
struct GradProbeReport {
  double category_shared = 0.0;
  double category_head = 0.0;
  double total_shared = 0.0;
  double total_category = 0.0;
  double total_pose = 0.0;
  double pose_induced_shared = 0.0;  // norm of (total - category) on omega1
  std::size_t shared_count = 0;
  std::size_t category_count = 0;
  std::size_t pose_count = 0;
  std::size_t batches = 0;
  std::uint64_t seed = 0;

  /// Root-mean-square per parameter: norm / sqrt(count), 0 for empty partitions.
  static double rms(double norm, std::size_t count);
};

/// Deterministic probe batches drawn from the start of the fixed sample order.
template <typename T>
std::vector<Batch<T>> probe_batches(const Dataset& data, std::size_t count, std::size_t batch_size,
                                    std::uint64_t seed);

/// Probe with eval-mode batch norm and dropout disabled.
template <typename T>
GradProbeReport gradient_probe(const Graph& graph, const ParamStore<T>& params,
                               const std::vector<Batch<T>>& batches, const SinkWeights& weights);

/// Converged when the probed loss gradient norm on the shared partition,
/// divided by the number of shared parameters, is below 1e-4, or when the
/// train loss moved less than 1e-4 across the last three epochs.
bool near_converged(const GradProbeReport& probe, const std::vector<EpochLog>& logs);

// ---------------------------------------------------------------- entropy

struct UnitEntropy {
  double e_obj = 0.0;  // bits
  double e_pos = 0.0;  // bits
  double mass = 0.0;
  bool dead = false;
};

struct UnitEntropyTable {
  std::string layer;
  std::size_t categories = 0;
  std::size_t poses = 0;
  std::vector<UnitEntropy> units;
  std::size_t dead_count() const;
};

inline constexpr double kDeadMass = 1e-8;

/// Shannon entropy in bits of a non-negative mass vector after normalization
/// (0 log 0 = 0).
double entropy_bits(std::span<const double> mass);

/// Per-unit category and pose entropies of class-conditional activation mass.
/// `responses` is N x U and must be non-negative.
UnitEntropyTable unit_entropy_table(std::span<const double> responses, std::size_t units,
                                    std::span<const std::size_t> category, std::size_t categories,
                                    std::span<const std::size_t> pose, std::size_t poses,
                                    std::string layer = {});

enum class Reduce { Mean, Max };

/// N x U responses of a layer: conv channels reduce over space (mean or max),
/// fc units are taken as-is.
template <typename T>
std::vector<double> layer_responses(const Graph& graph, const ParamStore<T>& params,
                                    const std::string& layer, const Dataset& data, Reduce reduce,
                                    std::size_t* units_out, std::size_t batch_size = 256);

template <typename T>
UnitEntropyTable unit_entropy(const Graph& graph, const ParamStore<T>& params,
                              const std::string& layer, const Dataset& data);

/// Pearson correlation of E_obj and E_pos over live units. Throws when fewer
/// than two live units remain or either vector has zero variance.
double decoupleness(const UnitEntropyTable& table);

struct DecoupleRow {
  std::string layer;
  double gamma = 0.0;
  std::size_t units = 0;
  std::size_t dead = 0;
};

// ---------------------------------------------------------------- receptive fields

struct RfUnit {
  std::vector<double> image;       // H x W x C mean of the selected images
  std::vector<std::size_t> top;    // selected sample indices, strongest first
  bool dead = false;
};

/// Top-k average per unit from an N x U response table. Ties rank by lower
/// sample index; dead units (all zero) average the first k samples.
std::vector<RfUnit> rf_average_from_responses(std::span<const double> responses, std::size_t units,
                                              const Dataset& data, std::size_t k);

template <typename T>
std::vector<RfUnit> rf_average(const Graph& graph, const ParamStore<T>& params,
                               const std::string& layer, const Dataset& data, std::size_t k = 100);

// ---------------------------------------------------------------- projection

struct Projection {
  std::vector<double> coords;         // N x 2
  std::vector<double> eigenvalues;    // covariance spectrum, descending
  std::array<std::vector<double>, 2> axes;
};

/// PCA onto the top two principal directions of mean-centred features
/// (N x D). Each axis is signed so its largest-magnitude entry is positive.
Projection project_2d(std::span<const double> features, std::size_t dims);

// ---------------------------------------------------------------- warm start

struct WarmstartConfig {
  TrainConfig base_pretrain;
  TrainConfig multi_pretrain;
  TrainConfig base_continue;
  TrainConfig multi_continue;
  std::uint64_t seed = 1;  // network init
};

struct WarmstartCurve {
  double initial_error = 0.0;
  std::vector<double> test_error;  // one entry per continuation epoch
};

struct WarmstartResult {
  WarmstartCurve base_to_multi;  // direction (a)
  WarmstartCurve multi_to_base;  // direction (b)
};

/// (a) base trained, transplanted into inject-multi, training continued;
/// (b) inject-multi trained, transplanted into base, training continued.
template <typename T>
WarmstartResult warmstart_experiment(const NetworkSpec& spec, const Dataset& train_set,
                                     const Dataset& test_set, const WarmstartConfig& config);

}  // namespace wwcnn
