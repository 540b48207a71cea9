#include "elm/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace elm {

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("rng: invalid uniform range");
  return lo + (hi - lo) * uniform01();
}

int Rng::uniform_int(int lo, int hi) {
  if (lo > hi) throw std::invalid_argument("rng: invalid integer range");
  uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] keeps the log finite.
  double u1 = 1.0 - uniform01();
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

double Rng::trunc_normal(double stddev) {
  for (;;) {
    double x = normal() * stddev;
    if (std::abs(x) <= 2.0 * stddev) return x;
  }
}

}  // namespace elm
