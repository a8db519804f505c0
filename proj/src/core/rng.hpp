#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace lfd {

// Counter-based stream (Philox4x32-10). Every stochastic consumer opens its
// own stream from (seed, purpose tag, index), so draw order never depends on
// scheduling and any stream can be reopened mid-sequence.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view tag, std::uint64_t index);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (second draw cached).
  double normal();

  // Raw block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> block(const std::array<std::uint32_t, 4>& counter,
                                            const std::array<std::uint32_t, 2>& key);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> buf_;
  int buf_pos_ = 4;  // forces refill on first draw
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace lfd
