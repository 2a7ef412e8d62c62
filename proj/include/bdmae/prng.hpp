// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace bdmae {

/// Seeded pseudo-random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The distribution mappings below are written out by hand because
/// the standard library's distributions are implementation-defined; with
/// them the stream is identical on every conforming platform.
///
///   uniform():      (u64 >> 11) * 2^-53, in [0, 1)
///   below(n):       rejection sampling on the top of the u64 range
///   fork(stream):   new seed = splitmix64(seed ^ splitmix64(stream + 1))
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Independent child stream; depends only on this stream's seed and
  /// `stream`, never on how many values were already drawn.
  Prng fork(std::uint64_t stream) const {
    return Prng(splitmix64(seed_ ^ splitmix64(stream + 1)));
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace bdmae
