#pragma once

#include <cstdint>
#include <random>

namespace fss {

// Deterministic RNG handle. One instance per worker; derive child seeds with
// fork() so parallel samplers never share a stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
  }
  double normal(double mean, double sd) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

  Rng fork(uint64_t stream_id) {
    // splitmix64 of (base draw, stream id) keeps forks decorrelated
    uint64_t z = engine_() + 0x9e3779b97f4a7c15ull * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fss
