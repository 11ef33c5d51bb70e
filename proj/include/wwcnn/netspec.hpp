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

// Line-oriented architecture description and the builders for the three
// network variants: the plain chain, pose head on the top fc only, and pose
// head fed by branches from several intermediate layers plus the top fc.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wwcnn/graph.hpp"
#include "wwcnn/params.hpp"

namespace wwcnn {

enum class LayerKind : std::uint8_t { Conv, Pool, BatchNorm, Relu, Fc, Dropout };

std::string_view layer_kind_name(LayerKind k);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  double rate = 0.5;
  std::size_t line = 0;
};

struct InjectionSpec {
  std::string source;
  std::size_t width1 = 0;
  std::size_t width2 = 0;
  std::size_t line = 0;
};

struct NetworkSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<LayerSpec> layers;
  std::size_t category_width = 0;
  std::size_t pose_width = 0;  // 0 = no pose head declared
  std::vector<InjectionSpec> injections;
  double lambda = 1.0;

  std::size_t count(LayerKind kind) const;
  /// Normalized text form; equal for specs that differ only in layout or comments.
  std::string canonical() const;
  std::uint64_t hash() const;
};

NetworkSpec parse_spec(std::string_view text);
NetworkSpec load_spec(const std::filesystem::path& path);

enum class ArchKind : std::uint8_t { Base = 0, InjectTop = 1, InjectMulti = 2 };

std::string_view arch_name(ArchKind k);
/// Accepts "base", "inject-top"/"inject_top", "inject-multi"/"inject_multi".
ArchKind parse_arch(std::string_view s);

template <typename T>
struct Network {
  ArchKind kind = ArchKind::Base;
  Graph graph;
  ParamStore<T> params;
};

/// Graph structure only.
Graph build_graph(const NetworkSpec& spec, ArchKind kind);

/// Graph plus freshly initialized parameters. Parameters shared between
/// variants get identical values for the same seed.
template <typename T>
Network<T> build(const NetworkSpec& spec, ArchKind kind, std::uint64_t seed);

template <typename T>
struct PruneResult {
  Network<T> network;
  bool was_noop = false;  // input was already a base network
};

/// Drops every node the category sink does not depend on, and every pose-side
/// parameter.
template <typename T>
PruneResult<T> prune(const Network<T>& net);

struct TransplantReport {
  std::vector<std::string> copied;
  std::vector<std::string> fresh;
};

/// Copies name-matched parameters from src into dst; dst-only parameters are
/// re-initialized from `seed`.
template <typename T>
TransplantReport transplant(const ParamStore<T>& src, ParamStore<T>& dst, std::uint64_t seed);

}  // namespace wwcnn
