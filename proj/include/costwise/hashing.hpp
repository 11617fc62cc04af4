#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>

namespace costwise {

// FNV-1a, 64-bit. Used for plan signatures and feature bucket hashing, so the
// exact constants matter: serialized stores embed these hashes as keys.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Mixes a list of integers into one stream id, for decorrelated substreams
// keyed on (seed, template, day, instance) and the like.
inline std::uint64_t mix_stream(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = kFnvOffset;
  for (std::uint64_t v : parts) {
    for (int i = 0; i < 8; ++i) {
      h ^= static_cast<unsigned char>(v >> (8 * i));
      h *= kFnvPrime;
    }
  }
  return h;
}

// Small deterministic RNG on top of splitmix64. Avoids <random> distributions
// on purpose: their output is implementation-defined, and workload generation
// has to be reproducible byte for byte.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [lo, hi], inclusive
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // Box-Muller; one value per call, the twin is discarded to keep the
  // consumption pattern trivial to reason about.
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // multiplicative noise factor with unit median and log-sd sigma
  double lognormal_factor(double sigma) {
    if (sigma <= 0.0) return 1.0;
    return std::exp(sigma * normal());
  }

 private:
  std::uint64_t state_;
};

}  // namespace costwise
