#pragma once

#include <array>
#include <cstdint>

namespace hazardml {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// A stream is identified by (seed, subject index, process id); each draw
// increments a 64-bit counter inside that stream, so draws for one subject
// never depend on how many draws any other subject consumed. That makes
// simulations reproducible regardless of evaluation order or thread count.
//
// Counter layout: word0/word1 = draw counter (lo/hi), word2 = subject index,
// word3 = process id. Key = seed (lo/hi 32 bits).
class PhiloxStream {
 public:
  PhiloxStream(std::uint64_t seed, std::uint32_t subject, std::uint32_t process);

  std::array<std::uint32_t, 4> next_block();
  // Uniform double in the open interval (0, 1), 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  // Standard normal by Box-Muller (both variates consumed in order).
  double normal();

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t subject_;
  std::uint32_t process_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

// Derives an independent 64-bit seed for replicate r (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace hazardml
