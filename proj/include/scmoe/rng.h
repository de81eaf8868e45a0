#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace scmoe {

// Deterministic random stream. All randomness in the project flows through
// seeded instances of this class; independent subsystems derive their own
// stream with derive() so that adding draws in one place does not shift
// another.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

  // Independent stream keyed by a tag, stable across runs.
  Rng derive(const std::string& tag) const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : tag) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return Rng(seed_ ^ h);
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_ = 0;
};

}  // namespace scmoe
