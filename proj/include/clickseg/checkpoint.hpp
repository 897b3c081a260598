// Copyright 2026 The clickseg Authors
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

// Checkpoint file layout (all integers little-endian):
//
//   8 bytes   magic "CLKSEGCK"
//   u32       format version (kCheckpointVersion)
//   u32       header length L
//   L bytes   JSON header: arch config, step_count, rng_seed, epochs_completed
//             and the element count of every section
//   sections  parameters, bn_buffers, adam_m, adam_v; each is a u64 element
//             count followed by that many float32 values. Parameters and
//             buffers follow UNet's documented slot order.
//   u32       CRC-32 (zlib polynomial) of every preceding byte

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include <zlib.h>

#include "clickseg/model.hpp"

namespace clickseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic = {'C', 'L', 'K', 'S', 'E', 'G', 'C', 'K'};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CorruptCheckpoint : public CheckpointError {
 public:
  explicit CorruptCheckpoint(const std::string& detail) : CheckpointError("corrupt checkpoint: " + detail) {}
};
class CheckpointVersionMismatch : public CheckpointError {
 public:
  explicit CheckpointVersionMismatch(std::uint32_t found)
      : CheckpointError("checkpoint version mismatch: file has " + std::to_string(found) + ", expected " +
                        std::to_string(kCheckpointVersion)) {}
};
class CheckpointShapeMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ArchMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline nlohmann::json to_json(const ArchConfig& a) {
  return {{"in_channels", a.in_channels}, {"base_width", a.base_width}, {"depth", a.depth},
          {"out_channels", a.out_channels}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.in_channels = j.at("in_channels").get<int>();
  a.base_width = j.at("base_width").get<int>();
  a.depth = j.at("depth").get<int>();
  a.out_channels = j.at("out_channels").get<int>();
  return a;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_floats(std::vector<unsigned char>& out, std::span<const float> values) {
  put_u64(out, values.size());
  for (float f : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string_view text(std::size_t n) {
    need(n);
    std::string_view s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(std::size_t expected, std::string_view section) {
    const std::uint64_t n = u64();
    if (n != expected) {
      throw CheckpointShapeMismatch("checkpoint shape mismatch: section " + std::string(section) + " has " +
                                    std::to_string(n) + " values, architecture requires " +
                                    std::to_string(expected));
    }
    need(n * 4);
    std::vector<float> out(n);
    for (auto& f : out) {
      const std::uint32_t bits = u32();
      std::memcpy(&f, &bits, sizeof f);
    }
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptCheckpoint("unexpected end of data");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const ModelState& s) {
  nlohmann::json header = {
      {"arch", to_json(s.net.arch())},
      {"step_count", s.step_count},
      {"rng_seed", s.rng_seed},
      {"epochs_completed", s.epochs_completed},
      {"sections",
       {{"parameters", s.net.parameters().size()},
        {"bn_buffers", s.net.buffers().size()},
        {"adam_m", s.adam_m.size()},
        {"adam_v", s.adam_v.size()}}},
  };
  const std::string text = header.dump();
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  detail::put_floats(out, s.net.parameters());
  detail::put_floats(out, s.net.buffers());
  detail::put_floats(out, s.adam_m);
  detail::put_floats(out, s.adam_v);
  detail::put_u32(out, detail::crc32_of(out));
  return out;
}

inline ModelState deserialize_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 8 + 4) throw CorruptCheckpoint("file too short");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw CorruptCheckpoint("bad magic");
  }
  detail::ByteReader reader(bytes.subspan(kCheckpointMagic.size()));
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion) throw CheckpointVersionMismatch(version);

  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader crc_reader(bytes.last(4));
  if (crc_reader.u32() != detail::crc32_of(body)) throw CorruptCheckpoint("CRC mismatch");

  const std::uint32_t header_len = reader.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(reader.text(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("bad header: ") + e.what());
  }
  ArchConfig arch;
  try {
    arch = arch_from_json(header.at("arch"));
    arch.validate();
  } catch (const std::exception& e) {
    throw CorruptCheckpoint(std::string("bad arch config: ") + e.what());
  }
  ModelState s{UNet<float>(arch), {}, {}, 0, 0, 0};
  s.step_count = header.value("step_count", std::int64_t{0});
  s.rng_seed = header.value("rng_seed", std::uint64_t{0});
  s.epochs_completed = header.value("epochs_completed", std::int32_t{0});

  const auto params = reader.floats(s.net.parameters().size(), "parameters");
  std::copy(params.begin(), params.end(), s.net.parameters().begin());
  const auto buffers = reader.floats(s.net.buffers().size(), "bn_buffers");
  std::copy(buffers.begin(), buffers.end(), s.net.buffers().begin());
  s.adam_m = reader.floats(params.size(), "adam_m");
  s.adam_v = reader.floats(params.size(), "adam_v");
  if (reader.remaining() != 4) throw CorruptCheckpoint("trailing bytes");
  return s;
}

// Writes atomically via a temporary file in the same directory.
inline void save_checkpoint(const ModelState& s, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(s);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// Loads a checkpoint for a run that also configured an architecture. The
// file's architecture wins; a differing request is rejected.
inline ModelState load_checkpoint(const std::filesystem::path& path, const ArchConfig& requested) {
  ModelState s = load_checkpoint(path);
  if (!(s.net.arch() == requested)) {
    throw ArchMismatch("checkpoint architecture " + to_json(s.net.arch()).dump() +
                       " conflicts with configured architecture " + to_json(requested).dump());
  }
  return s;
}

}  // namespace clickseg
