#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "aarmvs/core/tensor.hpp"

namespace aarmvs {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed derivation that is independent of parameter creation order: every
// consumer mixes the run seed with a stable name.
inline uint64_t derive_seed(uint64_t seed, std::string_view name) {
  uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
  for (char c : name) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
  return h;
}

// Small counter-based generator (splitmix64 stream). Self-contained so
// sequences do not depend on the C++ standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  // Box-Muller; consumes two uniforms per pair.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void fill_gaussian(Tensor<T>& t, double stddev) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(gaussian() * stddev);
  }
  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace aarmvs
