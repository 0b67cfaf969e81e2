#pragma once

// Counter-based random streams (Philox4x32-10).
//
// A stream is addressed by (seed, stream id); draw k of a stream is a pure
// function of those two values and k. Monte Carlo drivers give every sample
// its own stream id, so results do not depend on how samples are split
// across worker threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace zipflow {

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

}  // namespace detail

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// One Philox4x32 block with 10 rounds.
constexpr PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(detail::kPhiloxM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(detail::kPhiloxM1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += detail::kPhiloxW0;
    key[1] += detail::kPhiloxW1;
  }
  return ctr;
}

/// Sequential view of one Philox stream. Satisfies UniformRandomBitGenerator.
class RandomStream {
 public:
  using result_type = std::uint32_t;

  RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_lo_(static_cast<std::uint32_t>(stream_id)),
        stream_hi_(static_cast<std::uint32_t>(stream_id >> 32)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (lane_ == 4) refill();
    return block_[lane_++];
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    const std::uint64_t hi = (*this)() >> 5;  // 27 bits
    const std::uint64_t lo = (*this)() >> 6;  // 26 bits
    return static_cast<double>((hi << 26) | lo) * 0x1.0p-53;
  }

  /// Uniform double in (0, 1).
  double uniform_open() noexcept {
    double u;
    do u = uniform();
    while (u == 0.0);
    return u;
  }

  double exponential() noexcept { return -std::log(uniform_open()); }

  /// Index drawn from a cumulative distribution (last entry is the total).
  template <class Range>
  std::size_t pick(const Range& cdf) noexcept {
    const double total = cdf[cdf.size() - 1];
    const double u = uniform() * total;
    std::size_t lo = 0, hi = cdf.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (u < cdf[mid]) hi = mid;
      else lo = mid + 1;
    }
    return lo;
  }

 private:
  void refill() noexcept {
    block_ = philox4x32_10({draw_lo_, draw_hi_, stream_lo_, stream_hi_}, key_);
    if (++draw_lo_ == 0) ++draw_hi_;
    lane_ = 0;
  }

  PhiloxKey key_;
  std::uint32_t stream_lo_, stream_hi_;
  std::uint32_t draw_lo_ = 0, draw_hi_ = 0;
  PhiloxCounter block_{};
  int lane_ = 4;
};

/// Stream id for sample `sample` of grid point `point`.
constexpr std::uint64_t stream_id(std::uint64_t point, std::uint64_t sample) noexcept {
  return (point << 40) ^ sample;
}

}  // namespace zipflow
