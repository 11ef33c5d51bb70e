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

#include "wwcnn/params.hpp"

#include "wwcnn/rng.hpp"

namespace wwcnn {

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::Shared: return "shared";
    case Partition::CategoryHead: return "category_head";
    case Partition::PoseHead: return "pose_head";
    case Partition::PoseBranch: return "pose_branch";
  }
  return "?";
}

Partition parse_partition(std::string_view s) {
  for (auto p : {Partition::Shared, Partition::CategoryHead, Partition::PoseHead,
                 Partition::PoseBranch})
    if (partition_name(p) == s) return p;
  throw ConfigError("unknown partition '" + std::string(s) + "'");
}

template <typename T>
void initialize(Parameter<T>& p, std::uint64_t seed) {
  switch (p.init) {
    case Init::Zero: p.value.fill(T(0)); break;
    case Init::One: p.value.fill(T(1)); break;
    case Init::Gaussian: {
      Rng rng(derive_seed(seed, p.name));
      for (auto& v : p.value.storage()) v = static_cast<T>(rng.normal(0.0, kInitStddev));
      break;
    }
  }
}

template void initialize(Parameter<float>&, std::uint64_t);
template void initialize(Parameter<double>&, std::uint64_t);

}  // namespace wwcnn
