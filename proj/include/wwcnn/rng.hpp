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

#include <array>
#include <cstdint>
#include <string_view>

namespace wwcnn {

/// splitmix64 finalizer; also used to expand seeds.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over bytes.
std::uint64_t fnv1a(std::string_view bytes);

/// Derive a child seed from a parent seed and a tag. Used to hand one
/// experiment seed down to data generation, init, batch order and dropout.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

/// xoshiro256** seeded through splitmix64. Normal deviates use Box-Muller
/// with one cached spare. The stream is fixed for a given seed.
class Rng {
 public:
  struct State {
    std::array<std::uint64_t, 4> s{};
    bool has_spare = false;
    double spare = 0.0;
    bool operator==(const State&) const = default;
  };

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  State state_;
};

}  // namespace wwcnn
