#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "trot/matrix.hpp"

namespace trot {

/// xoshiro256** seeded through splitmix64. Self-contained so that streams are
/// bit-identical across standard libraries and platforms, which the CLI's
/// determinism contract relies on.
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ull;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      word = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform in {0, ..., n-1}.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  double exponential() { return -std::log1p(-uniform()); }

  double normal() {
    // Marsaglia polar method; second deviate cached.
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Symmetric Dirichlet(1) draw: normalized unit exponentials.
  Vector dirichlet(std::size_t n) {
    Vector out(n);
    double total = 0.0;
    for (auto& v : out) {
      v = exponential();
      total += v;
    }
    for (auto& v : out) v /= total;
    return out;
  }

  /// Categorical draw from (unnormalized) nonnegative weights.
  std::size_t categorical(const Vector& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw std::invalid_argument("Rng::categorical: no positive weight");
    double u = uniform() * total;
    for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
      u -= weights[k];
      if (u < 0.0) return k;
    }
    return weights.size() - 1;
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4] = {};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace trot
