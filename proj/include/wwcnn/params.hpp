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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wwcnn/error.hpp"
#include "wwcnn/tensor.hpp"

namespace wwcnn {

/// Which loss a parameter serves. Shared and CategoryHead together are the
/// base network; PoseHead and PoseBranch are removed by pruning.
enum class Partition : std::uint8_t { Shared = 0, CategoryHead = 1, PoseHead = 2, PoseBranch = 3 };

std::string_view partition_name(Partition p);
Partition parse_partition(std::string_view s);
inline bool is_pose_side(Partition p) {
  return p == Partition::PoseHead || p == Partition::PoseBranch;
}

enum class Init : std::uint8_t { Gaussian = 0, Zero = 1, One = 2 };

inline constexpr double kInitStddev = 0.01;

template <typename T>
struct Parameter {
  std::string name;
  Partition partition = Partition::Shared;
  std::string branch;  // injection source layer, PoseBranch only
  bool trainable = true;
  Init init = Init::Zero;
  Tensor<T> value;
};

/// Re-draws a parameter from its init rule. Gaussian draws come from a stream
/// derived from (seed, name), so a parameter's initial value does not depend
/// on which other parameters exist.
template <typename T>
void initialize(Parameter<T>& p, std::uint64_t seed);

/// Named parameter tensors in insertion order.
template <typename T>
class ParamStore {
 public:
  std::size_t add(Parameter<T> p) {
    if (index_.count(p.name)) throw ConfigError("duplicate parameter '" + p.name + "'");
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  Parameter<T>& at(std::string_view name) { return params_[require(name)]; }
  const Parameter<T>& at(std::string_view name) const { return params_[require(name)]; }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  /// Number of trainable scalars, optionally restricted to one partition.
  std::size_t scalar_count(std::optional<Partition> only = std::nullopt) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable && (!only || p.partition == *only)) n += p.value.size();
    return n;
  }

  /// Copy keeping only parameters for which keep(p) is true.
  ParamStore filtered(const std::function<bool(const Parameter<T>&)>& keep) const {
    ParamStore out;
    for (const auto& p : params_)
      if (keep(p)) out.add(p);
    return out;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_)
      out.add(Parameter<U>{p.name, p.partition, p.branch, p.trainable, p.init,
                           p.value.template cast<U>()});
    return out;
  }

  bool operator==(const ParamStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto &a = params_[i], &b = o.params_[i];
      if (a.name != b.name || a.partition != b.partition || a.branch != b.branch ||
          a.trainable != b.trainable || !(a.value == b.value))
        return false;
    }
    return true;
  }

 private:
  std::size_t require(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace wwcnn
