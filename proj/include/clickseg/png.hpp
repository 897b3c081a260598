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

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clickseg/grid.hpp"

namespace clickseg {

// Fixed display window applied to normalized intensities.
struct DisplayWindow {
  float low = -3.0f;
  float high = 3.0f;
};

inline std::vector<std::uint8_t> render_display(const Grid2D& image, DisplayWindow window = {}) {
  if (!(window.high > window.low)) throw std::invalid_argument("render_display: empty window");
  std::vector<std::uint8_t> out(image.size());
  const auto v = image.values();
  const float scale = 255.0f / (window.high - window.low);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float t = std::clamp((v[i] - window.low) * scale, 0.0f, 255.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(t));
  }
  return out;
}

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char (&type)[5], std::span<const std::uint8_t> data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

// 8-bit grayscale PNG, filter type 0 on every row.
inline std::vector<std::uint8_t> encode_png_gray8(std::span<const std::uint8_t> pixels, int width, int height) {
  if (width < 1 || height < 1 || pixels.size() != std::size_t(width) * std::size_t(height)) {
    throw std::invalid_argument("encode_png_gray8: pixel count does not match dimensions");
  }
  std::vector<std::uint8_t> raw;
  raw.reserve(std::size_t(height) * (std::size_t(width) + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const auto row = pixels.subspan(std::size_t(y) * std::size_t(width), std::size_t(width));
    raw.insert(raw.end(), row.begin(), row.end());
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("encode_png_gray8: zlib compression failed");
  }
  z.resize(zlen);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // bit depth, gray, deflate, filter, no interlace
  detail::put_chunk(png, "IHDR", ihdr);
  detail::put_chunk(png, "IDAT", z);
  detail::put_chunk(png, "IEND", {});
  return png;
}

inline std::vector<std::uint8_t> render_png(const Grid2D& image, DisplayWindow window = {}) {
  return encode_png_gray8(render_display(image, window), image.width(), image.height());
}

}  // namespace clickseg
