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

// Little-endian binary helpers shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "wwcnn/error.hpp"

namespace wwcnn::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}
  template <typename U>
  void put(U v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void check(const std::string& what) {
    if (!os_) throw IoError("write failed: " + what);
  }

 private:
  std::ostream& os_;
};

class BinReader {
 public:
  BinReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}
  template <typename U>
  U get(const std::string& field) {
    U v{};
    bytes(&v, sizeof(U), field);
    return v;
  }
  void bytes(void* p, std::size_t n, const std::string& field) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw IoError(what_ + ": truncated while reading " + field);
  }
  std::string str(const std::string& field, std::size_t max_len = 1u << 24) {
    const auto n = get<std::uint32_t>(field + " length");
    if (n > max_len) throw IoError(what_ + ": implausible length for " + field);
    std::string s(n, '\0');
    bytes(s.data(), n, field);
    return s;
  }
  bool at_eof() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace wwcnn::detail
