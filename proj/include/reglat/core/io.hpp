// Copyright 2026 The reglat Authors.
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

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace reglat::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, std::string_view text);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

/// Creates `dir` (and parents). Throws kInvalidArgument when the directory
/// already holds files and `force` is false.
void prepare_output_dir(const fs::path& dir, bool force);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits by `hex`.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

/// Little-endian encode/decode of arithmetic arrays.
template <class T>
void append_le(std::vector<std::uint8_t>& out, std::span<const T> values) {
  static_assert(std::is_arithmetic_v<T>);
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(T));
  std::memcpy(out.data() + start, values.data(), values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto* p = out.data() + start + i * sizeof(T);
      std::reverse(p, p + sizeof(T));
    }
  }
}

template <class T>
std::vector<T> decode_le(std::span<const std::uint8_t> bytes) {
  static_assert(std::is_arithmetic_v<T>);
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (auto& v : out) {
      auto* p = reinterpret_cast<std::uint8_t*>(&v);
      std::reverse(p, p + sizeof(T));
    }
  }
  return out;
}

/// Shortest round-trip decimal rendering of a double.
std::string format_double(double v);

}  // namespace reglat::io
