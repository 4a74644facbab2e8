#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ecg {

// Deterministic RNG used everywhere seeds matter. Distributions are
// hand-rolled on top of mt19937_64 so results do not depend on the
// standard library's (implementation-defined) distribution code.
class RandomEngine {
public:
  explicit RandomEngine(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 gen_;
};

// splitmix64 finalizer; used to derive per-epoch / per-batch sub-seeds
// from one run seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ecg
