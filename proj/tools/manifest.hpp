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

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace wwcnn::cli {

inline constexpr const char* kManifestName = "manifest.jsonl";

/// One line of an output directory's manifest.jsonl.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;  // arguments after the program name
  std::string cwd;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  std::vector<std::string> outputs;  // file names inside the output directory
  std::string version;
  std::string started;  // UTC, ISO 8601
  double duration_s = 0.0;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// Appends one entry; earlier lines are never rewritten.
void append_manifest(const std::filesystem::path& dir, const RunManifest& entry);

/// All entries of a manifest file, or of `<dir>/manifest.jsonl` when given a directory.
std::vector<RunManifest> read_manifest(const std::filesystem::path& path);

/// Relative output paths are placed under $WWCNN_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::string& out);

std::string utc_timestamp();

}  // namespace wwcnn::cli
