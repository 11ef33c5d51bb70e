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

// Synthetic "turntable" dataset: parametric shapes rendered under a grid of
// in-plane rotations and vertical foreshortenings, with per-instance jitter.
// Every record carries a category, a pose and the instance it came from.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "wwcnn/graph.hpp"

namespace wwcnn {

struct GenConfig {
  std::size_t categories = 10;
  std::size_t n_rot = 8;
  std::size_t n_az = 6;
  std::size_t instances = 16;    // per category
  std::size_t backgrounds = 4;   // texture pool per instance; each record uses one
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t shape_set = 0;     // 0 or 1, two disjoint sets of ten shapes
  std::uint64_t seed = 1;

  std::size_t poses() const { return n_rot * n_az; }
  void validate() const;
};

inline constexpr std::size_t kShapesPerSet = 10;
inline constexpr std::size_t kShapeSets = 2;

std::string_view shape_name(std::size_t shape_set, std::size_t category);

inline std::size_t encode_pose(std::size_t rot, std::size_t az, std::size_t n_az) {
  return rot * n_az + az;
}

struct SampleRecord {
  std::vector<float> image;  // H x W x C, values in [0, 1]
  std::uint32_t category = 0;
  std::uint32_t pose = 0;
  std::uint32_t instance = 0;
  std::uint32_t background = 0;
  bool operator==(const SampleRecord&) const = default;
};

struct DatasetMeta {
  std::uint32_t categories = 0;
  std::uint32_t poses = 0;
  std::uint32_t n_rot = 0;
  std::uint32_t n_az = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::size_t pixels() const { return std::size_t{height} * width * channels; }
  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<SampleRecord> records;
  std::size_t size() const { return records.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Records ordered by (category, instance, rotation, azimuth).
Dataset generate(const GenConfig& config);

/// Splits instances (not images) per category. The train share is
/// ceil(fraction * instances); both sides must end up non-empty.
std::pair<Dataset, Dataset> split_by_instance(const Dataset& data, double train_fraction,
                                              std::uint64_t seed);

void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

/// Binary PGM (C=1) or PPM (C=3) of one H x W x C image in [0, 1].
void write_pnm(const std::filesystem::path& path, std::span<const float> image, std::size_t height,
               std::size_t width, std::size_t channels);

/// NCHW batch of the given records.
template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, bool with_pose = true);

}  // namespace wwcnn
