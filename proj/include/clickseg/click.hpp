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

#include <compare>
#include <cstdint>
#include <string_view>

namespace clickseg {

enum class Polarity : std::uint8_t { foreground, background };

inline constexpr std::string_view to_string(Polarity p) {
  return p == Polarity::foreground ? "foreground" : "background";
}

struct ClickId {
  std::uint64_t value = 0;
  friend constexpr auto operator<=>(ClickId, ClickId) = default;
};

// One user interaction. Coordinates are pixel column (x) and row (y).
struct Click {
  ClickId id;
  Polarity polarity = Polarity::foreground;
  int x = 0;
  int y = 0;

  friend constexpr bool operator==(const Click&, const Click&) = default;
};

}  // namespace clickseg
