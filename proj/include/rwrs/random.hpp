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

#include <cmath>
#include <cstdint>
#include <random>

#include <boost/random/normal_distribution.hpp>

namespace rwrs {

using Seed = std::uint64_t;
using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Used both as a seed mixer and as the PRF behind
/// lazily evaluated random fields.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and an index. Trial i of an
/// ensemble always runs on mix(master, i), independent of scheduling.
constexpr Seed mix(Seed parent, std::uint64_t index) noexcept {
  return splitmix64(parent ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Stream labels so that base, fiber and reference draws of the same trial
/// never share a generator.
namespace stream {
inline constexpr std::uint64_t base = 0xba5e;
inline constexpr std::uint64_t fiber = 0xf1be;
inline constexpr std::uint64_t reference = 0x4ef;
inline constexpr std::uint64_t gaussian = 0x9a55;
}  // namespace stream

/// Maps 64 random bits to a double in [0, 1).
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Maps 64 random bits to a double in (0, 1).
constexpr double to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline Engine make_engine(Seed seed) { return Engine(seed); }

/// Standard normal variates (ziggurat).
class NormalSource {
 public:
  explicit NormalSource(Seed seed) : engine_(seed) {}
  double operator()() { return dist_(engine_); }
  Engine& engine() { return engine_; }

 private:
  Engine engine_;
  boost::random::normal_distribution<double> dist_;
};

/// Draws base-T digits from 64-bit words by repeated fixed-point
/// multiplication. Each word yields enough digits that the per-digit bias
/// stays below 2^-32.
class DigitSource {
 public:
  DigitSource(Engine& engine, std::uint64_t base)
      : engine_(&engine), base_(base) {
    const double bits = std::log2(static_cast<double>(base));
    per_word_ = bits > 0 ? static_cast<int>(32.0 / bits) : 1;
    if (per_word_ < 1) per_word_ = 1;
  }

  std::uint64_t operator()() {
    if (left_ == 0) {
      word_ = (*engine_)();
      left_ = per_word_;
    }
    const unsigned __int128 product =
        static_cast<unsigned __int128>(word_) * base_;
    word_ = static_cast<std::uint64_t>(product);
    --left_;
    return static_cast<std::uint64_t>(product >> 64);
  }

 private:
  Engine* engine_;
  std::uint64_t base_;
  std::uint64_t word_ = 0;
  int per_word_ = 1;
  int left_ = 0;
};

}  // namespace rwrs
