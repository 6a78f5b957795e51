#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace fbsde {

/// Philox4x32-10 block function (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// Counter-based stream keyed by (seed, stream id). Two streams with the
/// same key produce the same numbers regardless of which thread draws them.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  /// Uniform on the open interval (0, 1).
  double uniform() {
    if (u_pos_ == 4) refill_uniform();
    return (static_cast<double>(ubuf_[u_pos_++]) + 0.5) * 0x1p-32;
  }

  double normal() {
    if (n_pos_ == 4) refill_normal();
    return nbuf_[n_pos_++];
  }

 private:
  std::array<std::uint32_t, 4> next_block() {
    const std::array<std::uint32_t, 4> ctr{
        static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    ++block_;
    return philox4x32(ctr, key_);
  }

  void refill_uniform() {
    ubuf_ = next_block();
    u_pos_ = 0;
  }

  void refill_normal() {
    const auto bits = next_block();
    for (int k = 0; k < 2; ++k) {
      const double u1 = (static_cast<double>(bits[2 * k]) + 0.5) * 0x1p-32;
      const double u2 = (static_cast<double>(bits[2 * k + 1]) + 0.5) * 0x1p-32;
      const double radius = std::sqrt(-2.0 * std::log(u1));
      const double angle = 2.0 * std::numbers::pi * u2;
      nbuf_[2 * k] = radius * std::cos(angle);
      nbuf_[2 * k + 1] = radius * std::sin(angle);
    }
    n_pos_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> ubuf_{};
  std::array<double, 4> nbuf_{};
  int u_pos_ = 4;
  int n_pos_ = 4;
};

}  // namespace fbsde
