#pragma once

#include <array>
#include <cstdint>

namespace cnnic {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A draw is a
/// pure function of (seed, stream, index), so any element of any stream can be
/// regenerated without replaying earlier draws.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream);

  /// Derives an independent stream, e.g. one per layer or per epoch.
  CounterRng split(std::uint64_t child) const;

  std::uint32_t bits(std::uint64_t index) const;
  /// Words 4*block .. 4*block+3 from a single Philox call.
  std::array<std::uint32_t, 4> block(std::uint64_t block) const;
  /// Uniform on [0,1) with 32 bits of resolution.
  double uniform(std::uint64_t index) const;

  // Sequential interface over the same stream.
  std::uint32_t next_bits() { return bits(position_++); }
  double next_uniform() { return uniform(position_++); }
  double next_normal();
  /// Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint64_t next_below(std::uint64_t bound);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t mix64(std::uint64_t x);

}  // namespace cnnic
