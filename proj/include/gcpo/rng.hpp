#pragma once

// Counter-based pseudo-random generator (Philox-4x32-10).
//
// Every random draw in this project is a pure function of (key, counter), so
// any component can be replayed in isolation and parallel workers never share
// mutable generator state.  Sub-streams are carved out with derive_seed(),
// which hashes a parent seed together with a stream tag and indices.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "gcpo/errors.hpp"

namespace gcpo {

namespace detail {

inline void mulhilo32(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  uint64_t p = static_cast<uint64_t>(a) * static_cast<uint64_t>(b);
  hi = static_cast<uint32_t>(p >> 32);
  lo = static_cast<uint32_t>(p);
}

}  // namespace detail

// One Philox-4x32 block with 10 rounds.  Matches the published test vectors.
inline std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                          std::array<uint32_t, 2> key) {
  constexpr uint32_t kMul0 = 0xD2511F53u;
  constexpr uint32_t kMul1 = 0xCD9E8D57u;
  constexpr uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    uint32_t hi0, lo0, hi1, lo1;
    detail::mulhilo32(kMul0, ctr[0], hi0, lo0);
    detail::mulhilo32(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

// Stream tags keep independently consumed sub-streams from colliding even
// when their index tuples coincide.
enum class Stream : uint32_t {
  init = 1,
  group = 2,
  collider = 3,
  rep_cond = 4,
  rep_loo = 5,
  query = 6,
  scm = 7,
  predictor = 8,
  test = 9,
  causal = 10,
};

// Derives a child seed from (seed, tag, a, b, c).  Pure hash, no state.
inline uint64_t derive_seed(uint64_t seed, Stream tag, uint64_t a = 0,
                            uint64_t b = 0, uint64_t c = 0) {
  std::array<uint32_t, 4> ctr = {
      static_cast<uint32_t>(a), static_cast<uint32_t>(a >> 32),
      static_cast<uint32_t>(b ^ (c << 16)),
      static_cast<uint32_t>(tag) ^ static_cast<uint32_t>((b >> 32) ^ (c >> 16))};
  std::array<uint32_t, 2> key = {static_cast<uint32_t>(seed),
                                 static_cast<uint32_t>(seed >> 32)};
  auto out = philox4x32(ctr, key);
  return (static_cast<uint64_t>(out[0]) << 32) | out[1];
}

// Sequential view over one keyed stream.  The position is an explicit
// counter, so copies replay identically from their construction point.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_{static_cast<uint32_t>(seed),
                                     static_cast<uint32_t>(seed >> 32)} {}

  uint32_t next_u32() {
    if (word_ == 4) refill();
    return block_[word_++];
  }

  uint64_t next_u64() {
    uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (one value per pair of uniforms).
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Samples an index from an explicit probability vector by walking the
  // cumulative sum in index order.  Requires weights summing to ~1.
  int categorical(std::span<const double> probs) {
    if (probs.empty()) throw ValidationError("categorical: empty distribution");
    double u = uniform();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
  }

 private:
  void refill() {
    block_ = philox4x32({static_cast<uint32_t>(counter_),
                         static_cast<uint32_t>(counter_ >> 32), 0, 0},
                        key_);
    ++counter_;
    word_ = 0;
  }

  std::array<uint32_t, 2> key_;
  uint64_t counter_ = 0;
  std::array<uint32_t, 4> block_{};
  int word_ = 4;
};

}  // namespace gcpo
