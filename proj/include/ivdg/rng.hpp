#pragma once

// Deterministic random-number streams with hierarchical key derivation.
//
// Every stochastic quantity in the library is drawn from a Stream whose seed
// is derived from a root seed plus a path of keys (strings and integers).
// Streams derived with the same path are bitwise identical; streams derived
// with different paths are statistically independent for practical purposes.
//
// The uniform and normal transforms are implemented by hand (rather than via
// std::uniform_real_distribution / std::normal_distribution) because the
// standard distributions are implementation-defined and would break bitwise
// reproducibility across toolchains.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>

namespace ivdg::rng {

// One splitmix64 round; used both as a seed scrambler and as a key mixer.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the bytes of a name; turns stream labels into 64-bit keys.
inline constexpr std::uint64_t key(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Mixes a child key into a parent seed. Non-commutative by design.
inline constexpr std::uint64_t mix(std::uint64_t seed, std::uint64_t k) {
  return splitmix64(seed ^ (k + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

template <typename... Keys>
inline constexpr std::uint64_t derive(std::uint64_t seed, Keys... keys) {
  ((seed = mix(seed, static_cast<std::uint64_t>(keys))), ...);
  return seed;
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on the open interval (0, 1); never returns an exact endpoint, so
  // downstream transforms (log, open-interval parameter draws) are safe.
  double uniform01() {
    const std::uint64_t bits = gen_() >> 12;  // top 52 bits
    return (static_cast<double>(bits) + 0.5) * 0x1p-52;
  }

  // Uniform on (lo, hi).
  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("uniform: lo must be < hi");
    return lo + (hi - lo) * uniform01();
  }

  // Standard normal via the Marsaglia polar method with spare caching.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double stddev) {
    if (!(stddev >= 0.0)) throw std::invalid_argument("normal: stddev must be >= 0");
    return mean + stddev * normal();
  }

  // Integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Child stream addressed by key; independent of this stream's consumption
  // state, so derivation order never perturbs draws.
  Stream child(std::uint64_t k) const { return Stream(mix(seed_, k)); }
  Stream child(std::string_view name) const { return child(key(name)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ivdg::rng
