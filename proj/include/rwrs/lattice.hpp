// Copyright 2026 The rwrs-lab Authors.
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
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>

#include "rwrs/random.hpp"

namespace rwrs {

/// A point of Z^d, d in {1, 2}. For d = 1 the y coordinate is always 0.
struct Site {
  std::int64_t x = 0;
  std::int64_t y = 0;

  constexpr auto operator<=>(const Site&) const = default;

  constexpr Site operator+(Site o) const { return {x + o.x, y + o.y}; }
  constexpr Site operator-(Site o) const { return {x - o.x, y - o.y}; }
  constexpr Site& operator+=(Site o) {
    x += o.x;
    y += o.y;
    return *this;
  }
};

constexpr std::int64_t sup_norm(Site s) {
  return std::max(s.x < 0 ? -s.x : s.x, s.y < 0 ? -s.y : s.y);
}

constexpr std::int64_t squared_norm(Site s) { return s.x * s.x + s.y * s.y; }

struct SiteHash {
  std::size_t operator()(Site s) const noexcept {
    return static_cast<std::size_t>(
        splitmix64(static_cast<std::uint64_t>(s.x) * 0x9e3779b97f4a7c15ULL ^
                   static_cast<std::uint64_t>(s.y)));
  }
};

}  // namespace rwrs
