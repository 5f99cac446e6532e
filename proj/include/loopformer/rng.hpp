#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace loopformer {

// Deterministic RNG on top of mt19937_64. All draws (uniform, gaussian,
// bounded ints) are hand-rolled from the raw 64-bit stream so that the same
// seed gives the same sequence regardless of standard-library version.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t raw() { return gen_(); }

  // [0, 1)
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // standard normal, Box-Muller with cached spare
  double gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 1.0 - u01();  // avoid log(0)
    double r = std::sqrt(-2.0 * std::log(u));
    double theta = 2.0 * 3.14159265358979323846 * u01();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // unbiased integer in [0, n)
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64; used to derive independent stream seeds from one root seed.
inline uint64_t split_seed(uint64_t root, uint64_t stream) {
  uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// One root seed split per subsystem so init / dropout / shuffle draws never
// interleave.
struct RngPool {
  explicit RngPool(uint64_t root)
      : init(split_seed(root, 1)),
        dropout(split_seed(root, 2)),
        shuffle(split_seed(root, 3)) {}
  Rng init;
  Rng dropout;
  Rng shuffle;
};

}  // namespace loopformer
