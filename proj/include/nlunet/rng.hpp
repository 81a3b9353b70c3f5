#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "nlunet/error.hpp"

namespace nlunet {

// Deterministic random stream. mt19937_64 produces identical raw output on
// every platform; the distributions are hand-rolled because the std:: ones
// are implementation-defined and would break bit-exact reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n). Modulo bias is < 2^-53 for the n used here.
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw ContractError("Rng::uniform_int: n must be positive");
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Standard normal via Box-Muller. Two draws per sample, no cached state,
  // so the stream position is a pure function of the call count.
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derived stream that is decorrelated from this one.
  Rng fork(uint64_t stream) {
    return Rng(next_u64() ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nlunet
