#pragma once

#include <cstdint>

namespace grustab {

// Splittable counter-based generator built on SplitMix64 (Steele et al.).
// The same seed produces the same stream on every platform; substreams are
// derived with split() so concurrent workers never share state.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    // Standard normal via Box-Muller (platform-independent, unlike
    // std::normal_distribution).
    double normal();
    double normal(double mean, double stddev);

    // Independent substream keyed on (original seed, stream id).
    Rng split(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace grustab
