#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace msp {

// Deterministic random source. The mt19937_64 engine has standardized raw
// output, and every transform below is written out by hand instead of using
// std::*_distribution, whose results vary across standard library
// implementations. Any two builds therefore produce identical draws.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // Uniform in [0, 1): top 53 bits scaled by 2^-53.
  double uniform() {
    return static_cast<double>(raw() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  uint64_t uniform_int(uint64_t n);

  // Standard normal via Box–Muller. Draws in pairs; one value is cached.
  double normal();

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // In-place Fisher–Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Stream derivation. Mixes a root seed with a textual tag and call-site
// indices so that independent consumers (scene i, training step s, parameter
// init) get decorrelated engines without any shared mutable state. The mix is
// splitmix64 applied to an fnv1a-style fold; stable by construction.
uint64_t mix_seed(uint64_t seed, std::string_view tag);
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a);
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b);

inline Rng derived_rng(uint64_t seed, std::string_view tag) {
  return Rng(mix_seed(seed, tag));
}
inline Rng derived_rng(uint64_t seed, std::string_view tag, uint64_t a) {
  return Rng(mix_seed(seed, tag, a));
}
inline Rng derived_rng(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
  return Rng(mix_seed(seed, tag, a, b));
}

}  // namespace msp
