#include "msp/rng.hpp"

#include <cmath>

#include "msp/error.hpp"

namespace msp {

uint64_t Rng::uniform_int(uint64_t n) {
  require(n > 0, ErrorKind::contract, "uniform_int needs n > 0");
  if (n == 1) return 0;
  // Largest multiple of n that fits in 64 bits; reject draws above it.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = raw();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  // Box–Muller on two uniforms; u1 shifted away from 0 so log stays finite.
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  have_cached_ = true;
  return r * std::cos(a);
}

namespace {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t fold(uint64_t h, uint64_t v) {
  return splitmix64(h ^ splitmix64(v));
}

uint64_t fold_tag(uint64_t h, std::string_view tag) {
  // fnv1a over the tag bytes keeps distinct purposes on distinct streams.
  uint64_t t = 0xcbf29ce484222325ull;
  for (unsigned char c : tag) {
    t ^= c;
    t *= 0x100000001b3ull;
  }
  return fold(h, t);
}

}  // namespace

uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  return fold_tag(splitmix64(seed), tag);
}

uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a) {
  return fold(mix_seed(seed, tag), a);
}

uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
  return fold(mix_seed(seed, tag, a), b);
}

}  // namespace msp
