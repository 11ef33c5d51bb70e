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

#include <iostream>
#include <string>
#include <vector>

namespace wwcnn::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kInput = 3, kNumeric = 4, kInternal = 1 };

/// Runs one command. `args` excludes the program name.
/// Failures print a single JSON line on `err` and return a nonzero code.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace wwcnn::cli
