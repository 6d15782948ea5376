#pragma once

#include <cstdint>
#include <string_view>

namespace asymloc {

/// xoshiro256** seeded through splitmix64. The state transition and output
/// function follow the reference implementation by Blackman and Vigna, so
/// streams are reproducible in any language.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Deterministic sub-stream seed from a parent seed and a tuple of labels.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

}  // namespace asymloc
