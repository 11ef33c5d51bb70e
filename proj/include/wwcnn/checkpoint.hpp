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

// Versioned binary checkpoint: architecture, canonical spec text, epoch
// counter, Rng state, parameters, and momentum buffers.

#include <cstdint>
#include <filesystem>
#include <string>

#include "wwcnn/netspec.hpp"
#include "wwcnn/trainer.hpp"

namespace wwcnn {

enum class Precision : std::uint8_t { F32 = 4, F64 = 8 };

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::F32 : Precision::F64;
}

template <typename T>
struct Checkpoint {
  ArchKind kind = ArchKind::Base;
  std::string spec_text;  // NetworkSpec::canonical()
  TrainState<T> state;

  std::uint64_t spec_hash() const;
  NetworkSpec spec() const { return parse_spec(spec_text); }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt);

/// Precision recorded in a checkpoint header.
Precision checkpoint_precision(const std::filesystem::path& path);

/// Loads a checkpoint, converting values if it was stored at the other precision.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace wwcnn
