#pragma once

#include <cstdint>

namespace todkit {

// Deterministic counter-based stream (splitmix64). Same seed yields the same
// sequence on every platform; this is what makes whole experiment runs
// reproducible bit-for-bit. Used for weight init, dropout, goal sampling,
// batch sampling and the user simulator.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be > 0. Modulo bias is negligible for
  // the small ranges used here and keeps the draw count predictable.
  std::size_t next_below(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Derives an independent stream. Distinct ids give streams that never
  // collide in practice, so parallel episodes can draw without coordination.
  RngStream child(std::uint64_t stream_id) const {
    RngStream mix(state_ ^ (0x9e3779b97f4a7c15ULL * (stream_id + 0x632be59bd9b4e019ULL)));
    return RngStream(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace todkit
