// Copyright 2026 The darwin-merge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Counter-based randomness. Every random draw in the toolkit is a pure
// function of (key, stream, index), so results never depend on evaluation
// order or thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace darwin {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3").
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// FNV-1a over the UTF-8 bytes of `text`.
constexpr std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Order-sensitive combination of seed material into one 64-bit key.
constexpr std::uint64_t derive_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
  return derive_seed(splitmix64(seed) ^ (next + 0x632BE59BD9B4E019ull), rest...);
}

/// Stable seed for a named tensor under a master seed.
constexpr std::uint64_t tensor_seed(std::uint64_t master_seed, std::string_view name) {
  return derive_seed(master_seed, fnv1a64(name));
}

/// 53-bit uniform double in [0, 1).
constexpr double to_unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Random value at position `index` of stream `stream` under `key`.
constexpr std::uint64_t random_bits_at(std::uint64_t key, std::uint64_t stream,
                                      std::uint64_t index) {
  const Philox4x32::Counter ctr = {
      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  const Philox4x32::Key k = {static_cast<std::uint32_t>(key),
                             static_cast<std::uint32_t>(key >> 32)};
  const auto out = Philox4x32::block(ctr, k);
  return (std::uint64_t{out[0]} << 32) | out[1];
}

constexpr double uniform_at(std::uint64_t key, std::uint64_t stream, std::uint64_t index) {
  return to_unit_double(random_bits_at(key, stream, index));
}

/// Sequential view over a Philox stream. Satisfies
/// UniformRandomBitGenerator so it also works with <algorithm> shuffles.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t key, std::uint64_t stream = 0)
      : key_(key), stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return random_bits_at(key_, stream_, index_++); }

  double uniform() { return to_unit_double((*this)()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one output per pair of uniforms).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t position() const { return index_; }

 private:
  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

}  // namespace darwin
