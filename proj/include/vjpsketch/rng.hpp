#pragma once

#include <cstdint>

namespace vjpsketch {

/// Splittable 64-bit generator (splitmix64 core). Every consumer derives its
/// own stream from (root seed, tags), so results do not depend on evaluation
/// order and are bit-reproducible across runs and thread layouts.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1] -- systematic sampling needs a strictly positive pivot.
  double next_open_closed() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  /// Standard normal via Box-Muller (pairs cached).
  double normal();

  /// Independent child stream; the derivation hashes the *origin* seed with
  /// the tags, so streams do not depend on how much the parent has consumed.
  Rng derive(std::uint64_t tag) const { return Rng(mix(seed_, tag)); }
  Rng derive(std::uint64_t tag_a, std::uint64_t tag_b) const {
    return Rng(mix(mix(seed_, tag_a), tag_b));
  }

  std::uint64_t seed() const { return seed_; }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace vjpsketch
