#pragma once

#include <cstdint>
#include <random>

namespace elm {

// splitmix64 step; derives independent stream seeds from one master seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Deterministic generator. Uniform and normal draws are synthesized from raw
// mt19937_64 words (std::*_distribution is implementation-defined), so the
// same seed yields the same stream on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }
  double uniform01();  // [0, 1)
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);  // inclusive bounds
  double normal();                  // N(0, 1), Box-Muller
  double normal(double mean, double stddev);
  double trunc_normal(double stddev);  // resampled until |x| <= 2*stddev

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace elm
