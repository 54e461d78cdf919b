#pragma once

// Seeded random source shared by every module.
//
// The draw sequence for a given seed is part of the on-disk contract: a
// manifest seed must regenerate the same LM and corpora on any conforming
// toolchain. The std:: distributions are implementation-defined, so the
// engine (xoshiro256**) and every transform below are written out.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "ngramlab/error.hpp"

namespace ngramlab {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s,
                                       std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent child seed from a parent seed and a label.
inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  return splitmix64(splitmix64(parent) ^ fnv1a64(label));
}

inline constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  // Bump when any transform below changes its draw order.
  static constexpr int kVersion = 1;

  explicit Rng(std::uint64_t seed) : seed_(seed), state_{splitmix64(seed)} {}

  std::uint64_t seed() const { return seed_; }

  Rng split(std::string_view label) const { return Rng(derive_seed(seed_, label)); }
  Rng split(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }

  std::uint64_t next_u64() { return engine_next(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_next() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InputError("Rng::below: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_next();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via the Marsaglia polar method; the spare deviate is kept.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// log of a Gamma(shape, 1) deviate. Marsaglia-Tsang for shape >= 1; for
  /// shape < 1 uses G(a) = G(a+1) * U^(1/a), kept in log space so tiny
  /// concentrations never underflow to zero.
  double log_gamma_deviate(double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape)) throw InputError("gamma shape must be > 0");
    if (shape < 1.0) {
      const double lg = log_gamma_deviate(shape + 1.0);
      return lg + std::log(uniform_open()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d * v);
    }
  }

  /// Symmetric Dirichlet(alpha * 1_k) sample.
  std::vector<double> dirichlet(std::size_t k, double alpha) {
    if (k == 0) throw InputError("dirichlet: k must be positive");
    std::vector<double> logs(k);
    double mx = -std::numeric_limits<double>::infinity();
    for (auto& l : logs) {
      l = log_gamma_deviate(alpha);
      mx = std::max(mx, l);
    }
    double total = 0.0;
    for (auto& l : logs) {
      l = std::exp(l - mx);
      total += l;
    }
    for (auto& l : logs) l /= total;
    return logs;
  }

  /// Index drawn from an (approximately) normalized weight vector.
  std::size_t categorical(std::span<const double> probs) {
    if (probs.empty()) throw InputError("categorical: empty distribution");
    const double u = uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] > 0.0) last_positive = i;
      acc += probs[i];
      if (u < acc) return i;
    }
    return last_positive;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  // xoshiro256** seeded through splitmix64.
  struct State {
    std::uint64_t s[4];
    explicit State(std::uint64_t x) {
      for (auto& w : s) {
        x = splitmix64(x);
        w = x;
      }
    }
  };

  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t engine_next() {
    auto& s = state_.s;
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }

  std::uint64_t seed_;
  State state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ngramlab
