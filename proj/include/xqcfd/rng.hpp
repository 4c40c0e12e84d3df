#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace xqcfd {

// Deterministic random stream. The normal/uniform transforms are implemented
// by hand so sequences are pinned to the generator, not to whatever the
// standard library's distributions do on a given platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return (gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    // Rejection-free modulo bias is irrelevant at the n we use, but cheap to avoid.
    std::uint64_t threshold = (~std::uint64_t(0) / n) * n;
    std::uint64_t x = gen_();
    while (x >= threshold) x = gen_();
    return static_cast<std::size_t>(x % n);
  }

  // Standard normal via Box-Muller, caching the second draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Derived independent stream; deterministic in (current seed path, id).
  Rng fork(std::uint64_t id) {
    std::uint64_t z = gen_() + 0x9e3779b97f4a7c15ull * (id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xqcfd
