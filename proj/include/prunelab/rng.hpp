#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace prunelab {

// Deterministic PRNG used everywhere seeds matter. mt19937_64 output is
// standardized, but the std distributions are not, so sampling goes through
// the explicit bit manipulations below to keep results identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(next_double()) * (hi - lo);
  }

  // Marsaglia polar rejection would consume a data-dependent number of
  // draws; Box-Muller keeps the stream position predictable.
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

 private:
  uint64_t state_;
};

// Derives an independent seed for a named stream ("init", "shuffle", ...)
// so that consuming one stream never shifts another.
inline uint64_t substream_seed(uint64_t base, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull ^ base;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  // one splitmix round to spread the FNV bits
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  return h ^ (h >> 27);
}

}  // namespace prunelab
