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

// Run-length codec for binary masks.
//
// A mask is scanned row-major and written as alternating run lengths,
// starting with a run of zeros (which may be 0 long). The trailing zero run is
// dropped, so an all-zero mask encodes to an empty list and every run after
// the first is positive. The decoder rejects non-canonical input.

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "clickseg/grid.hpp"

namespace clickseg {

class RleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<std::uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::uint32_t> runs;
  const auto bits = mask.bits();
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t b : bits) {
    if (b == current) {
      ++length;
      continue;
    }
    runs.push_back(length);
    current = b;
    length = 1;
  }
  if (current == 1) runs.push_back(length);
  return runs;
}

inline BinaryMask rle_decode(std::span<const std::uint32_t> runs, int width, int height) {
  BinaryMask mask(width, height);
  const std::uint64_t total = std::uint64_t(width) * std::uint64_t(height);
  std::uint64_t pos = 0;
  auto bits = mask.bits();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i > 0 && runs[i] == 0) throw RleError("rle: zero-length run after the first");
    if (pos + runs[i] > total) throw RleError("rle: runs exceed mask size");
    if (i % 2 == 1) std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(pos), runs[i], std::uint8_t{1});
    pos += runs[i];
  }
  if (!runs.empty() && runs.size() % 2 == 1) throw RleError("rle: trailing zero run must be omitted");
  return mask;
}

}  // namespace clickseg
