#pragma once

/// \file
/// Counter-based random streams.
///
/// Every random quantity used by the sampler is addressed by
/// (master seed, stream id, substream index, position). Draw i of a stream
/// does not depend on how many draws were taken from any other stream, which
/// keeps initial live sets prefix-stable and replays bit-reproducible.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace snowball_ns {

/// Streams used by the sampler.
enum class StreamId : std::uint64_t {
  kInitialPoints = 1,
  kWalk = 2,
  kTest = 99,
};

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a stream key from its address.
inline constexpr std::uint64_t stream_key(std::uint64_t seed, StreamId stream,
                                          std::uint64_t substream) noexcept {
  std::uint64_t k = splitmix64_mix(seed + 0x9e3779b97f4a7c15ULL);
  k = splitmix64_mix(k ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
  k = splitmix64_mix(k ^ (substream + 0x632be59bd9b4e019ULL));
  return k;
}

/// A stream of 64-bit words where word n is splitmix64(key + n * gamma).
///
/// The whole state is (key, position), so a stream can be reopened at any
/// position. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, StreamId stream, std::uint64_t substream = 0) noexcept
      : key_(stream_key(seed, stream, substream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++position_;
    return splitmix64_mix(key_ + position_ * kGamma);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller. Both variates of a pair are used.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  /// Uniform integer in [0, n) by rejection, unbiased.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t position() const noexcept { return position_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t position_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace snowball_ns
