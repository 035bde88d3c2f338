#pragma once

// Philox4x32-10 counter-based generator. A stream is identified by a 64-bit
// key and a 64-bit stream index; draws advance a 64-bit sub-counter, so any
// (key, stream, draw) triple is reproducible in isolation.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace bellsim {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

std::uint64_t splitmix64(std::uint64_t x);

/// Stream key for (seed, setting, delay, purpose).
std::uint64_t derive_key(std::uint64_t seed, std::uint64_t setting, std::uint64_t delay,
                         std::uint64_t purpose);

class PhiloxStream {
 public:
  using result_type = std::uint64_t;

  PhiloxStream(std::uint64_t key, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (used_ >= 2) refill();
    const auto i = 2 * used_++;
    return (static_cast<std::uint64_t>(buf_[i + 1]) << 32) | buf_[i];
  }

  /// Uniform in (0, 1], 53-bit resolution.
  double uniform_pos() { return (static_cast<double>((*this)() >> 11) + 1.0) * 0x1p-53; }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1p-53; }

  /// Standard normal pair by Box-Muller.
  std::array<double, 2> normal_pair() {
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double t = 2.0 * std::numbers::pi * uniform();
    return {r * std::cos(t), r * std::sin(t)};
  }

 private:
  void refill() {
    const PhiloxCounter ctr{static_cast<std::uint32_t>(draw_), static_cast<std::uint32_t>(draw_ >> 32),
                            static_cast<std::uint32_t>(stream_),
                            static_cast<std::uint32_t>(stream_ >> 32)};
    buf_ = philox4x32_10(ctr, key_);
    ++draw_;
    used_ = 0;
  }

  PhiloxKey key_;
  std::uint64_t stream_;
  std::uint64_t draw_ = 0;
  PhiloxCounter buf_{};
  unsigned used_ = 2;
};

}  // namespace bellsim
