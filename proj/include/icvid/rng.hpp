#pragma once

#include <cmath>
#include <cstdint>

namespace icvid {

// Counter-based generator: every output is a pure hash of
// (seed, stream, counter), so independently-keyed streams can be consumed in
// any order (or in parallel) and still reproduce bitwise. The mixer is the
// splitmix64 finalizer applied in a keyed chain.
namespace rng_detail {
inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace rng_detail

inline uint64_t hash3(uint64_t a, uint64_t b, uint64_t c) {
  using rng_detail::mix64;
  return mix64(mix64(mix64(a) ^ b) ^ c);
}

class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

  // A child generator keyed off this one; order-independent w.r.t. draws.
  CounterRng fork(uint64_t index) const {
    return CounterRng(seed_, hash3(seed_, stream_, index));
  }

  uint64_t next_u64() { return hash3(seed_, stream_, counter_++); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; the spare value is cached, so draws come
  // in deterministic sequence order within one generator.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] to keep log() finite.
    double u1 = 1.0 - next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace icvid
