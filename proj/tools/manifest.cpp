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

#include "manifest.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "wwcnn/error.hpp"

namespace wwcnn::cli {

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["argv"] = argv;
  j["cwd"] = cwd;
  j["config"] = config;
  j["seeds"] = seeds;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["version"] = version;
  j["started"] = started;
  j["duration_s"] = duration_s;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.cwd = j.value("cwd", std::string());
    m.config = j.value("config", nlohmann::json::object());
    m.seeds = j.value("seeds", nlohmann::json::object());
    m.inputs = j.value("inputs", nlohmann::json::object());
    m.outputs = j.value("outputs", std::vector<std::string>{});
    m.version = j.value("version", std::string());
    m.started = j.value("started", std::string());
    m.duration_s = j.value("duration_s", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("malformed manifest entry: ") + e.what());
  }
  return m;
}

void append_manifest(const std::filesystem::path& dir, const RunManifest& entry) {
  std::ofstream out(dir / kManifestName, std::ios::app);
  if (!out) throw IoError("cannot open " + (dir / kManifestName).string() + " for appending");
  out << entry.to_json().dump() << '\n';
  if (!out) throw IoError("failed writing " + (dir / kManifestName).string());
}

std::vector<RunManifest> read_manifest(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kManifestName : path;
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  std::vector<RunManifest> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(line_no, "manifest line is not valid JSON");
    entries.push_back(RunManifest::from_json(j));
  }
  if (entries.empty()) throw ParseError(0, "manifest " + file.string() + " has no entries");
  return entries;
}

std::filesystem::path resolve_output(const std::string& out) {
  std::filesystem::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("WWCNN_OUTPUT_ROOT"); root && *root) p = std::filesystem::path(root) / p;
  }
  return std::filesystem::absolute(p).lexically_normal();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace wwcnn::cli
