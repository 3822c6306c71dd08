// Copyright 2026 The xmcaug Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xmcaug/common.hpp"
#include "xmcaug/nn.hpp"

namespace xmcaug::ckpt {

// Versioned model container: an 8-byte magic, a length-prefixed JSON header
// (kind, metadata, tensor directory), then the tensor payloads as
// little-endian IEEE-754 doubles in directory order. Save -> load -> save
// round-trips bit-exactly.
inline constexpr char kMagic[8] = {'X', 'A', 'U', 'G', 'C', 'K', 'P', '1'};
inline constexpr int kFormatVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string kind;             // "generator" | "classifier"
  nlohmann::ordered_json meta;  // vocab, dims, hyperparameters
  std::vector<std::pair<std::string, nn::Mat>> tensors;

  const nn::Mat& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw CheckpointError("checkpoint tensor not found: " + name);
  }
};

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f64le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double get_f64le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
  nlohmann::ordered_json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = c.kind;
  header["meta"] = c.meta;
  auto dir = nlohmann::ordered_json::array();
  for (const auto& [name, mat] : c.tensors)
    dir.push_back({{"name", name}, {"rows", mat.rows}, {"cols", mat.cols}});
  header["tensors"] = std::move(dir);
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  detail::put_u32le(out, static_cast<std::uint32_t>(header_bytes.size()));
  out += header_bytes;
  for (const auto& [name, mat] : c.tensors)
    for (double v : mat.data) detail::put_f64le(out, v);
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a model checkpoint (bad magic)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = detail::get_u32le(p + sizeof(kMagic));
  std::size_t offset = sizeof(kMagic) + 4;
  if (offset + header_len > bytes.size()) throw CheckpointError("truncated checkpoint header");
  nlohmann::ordered_json header =
      nlohmann::ordered_json::parse(bytes.substr(offset, header_len), nullptr, false);
  if (header.is_discarded()) throw CheckpointError("malformed checkpoint header");
  if (header.at("format_version").get<int>() != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version");
  offset += header_len;

  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    nn::Mat m(rows, cols);
    const std::size_t need = m.size() * 8;
    if (offset + need > bytes.size()) throw CheckpointError("truncated tensor payload: " + name);
    for (std::size_t i = 0; i < m.size(); ++i)
      m.data[i] = detail::get_f64le(p + offset + i * 8);
    offset += need;
    c.tensors.emplace_back(name, std::move(m));
  }
  if (offset != bytes.size()) throw CheckpointError("trailing bytes after tensor payload");
  return c;
}

inline void save(const Checkpoint& c, const std::string& path) { write_file(path, serialize(c)); }

inline Checkpoint load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace xmcaug::ckpt
