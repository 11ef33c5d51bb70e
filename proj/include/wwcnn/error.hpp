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

#include <stdexcept>
#include <string>

namespace wwcnn {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a kernel, or training divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed architecture description.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& reason)
      : Error(line == 0 ? reason : "line " + std::to_string(line) + ": " + reason),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// File-level problems: missing files, bad magic, truncation, version mismatch.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or precondition violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace wwcnn
