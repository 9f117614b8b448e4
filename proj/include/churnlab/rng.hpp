#pragma once

#include <cmath>
#include <cstdint>

namespace churnlab {

// Tags keep the randomness channels keyed apart: the same numeric seed on two
// different channels never produces the same stream.
enum class RngStream : std::uint64_t {
  kInit = 1,
  kOrder = 2,
  kAugment = 3,
  kBlobs = 4,
};

// Counter-based generator keyed by (stream, seed, counters...). Stateless
// across uses: the same key always yields the same sequence, so any epoch's
// permutation or any batch's noise is recomputable without replaying earlier
// draws. Core is splitmix64 with a key-absorbing seed round per word.
class KeyedRng {
 public:
  KeyedRng(RngStream stream, std::uint64_t seed) {
    absorb(static_cast<std::uint64_t>(stream));
    absorb(seed);
  }
  KeyedRng(RngStream stream, std::uint64_t seed, std::uint64_t c0) : KeyedRng(stream, seed) {
    absorb(c0);
  }
  KeyedRng(RngStream stream, std::uint64_t seed, std::uint64_t c0, std::uint64_t c1)
      : KeyedRng(stream, seed, c0) {
    absorb(c1);
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller, cosine branch only (no cached spare, so
  // draw count per call is fixed at two).
  double next_gauss() {
    const double u1 = (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;  // (0,1)
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Uniform integer in [0, n), n >= 1. Lemire multiply-shift; the residual
  // bias at 64 bits is far below anything a statistical test can see.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  static constexpr double kTwoPi = 6.283185307179586476925286766559;

  void absorb(std::uint64_t word) {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_ ^ word;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    state_ = z ^ (z >> 31);
  }

  std::uint64_t state_ = 0x243F6A8885A308D3ULL;
};

}  // namespace churnlab
