#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace pillarnest {

// splitmix64; used to derive independent substreams from (seed, tag...) tuples.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

// Deterministic generator. Distributions are implemented here rather than via
// std::uniform_real_distribution etc., whose output is implementation-defined;
// every draw below is a pure function of the engine state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(mix64(seed)) {}
  Rng(uint64_t seed, uint64_t stream) : engine_(hash_combine(seed, stream)) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  float uniform() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), n >= 1
  uint64_t uniform_int(uint64_t n) {
    // modulo bias is < 2^-40 for any n that fits in memory here
    return next_u64() % n;
  }

  // Box-Muller; one value per call (the pair's twin is discarded to keep the
  // stream position independent of call parity bookkeeping).
  float normal() {
    float u1 = uniform();
    float u2 = uniform();
    if (u1 < 1e-12f) u1 = 1e-12f;
    return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.28318530717958647692f * u2);
  }

  float normal(float mean, float std) { return mean + std * normal(); }

  // normal(0, std) rejected outside 2 std (the init convention for weights)
  float truncated_normal(float std) {
    for (;;) {
      float v = normal();
      if (v >= -2.0f && v <= 2.0f) return v * std;
    }
  }

  // Fisher-Yates over [0, n)
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pillarnest
