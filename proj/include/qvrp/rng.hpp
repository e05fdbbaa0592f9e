#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qvrp {

// splitmix64; used to derive independent substream seeds from a master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
  return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

inline uint64_t hash_str(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic per-purpose substream: rng("rollout", epoch, batch, i).
class StreamRng {
 public:
  explicit StreamRng(uint64_t seed) : engine_(splitmix64(seed)) {}

  static StreamRng derive(uint64_t master, std::string_view tag, uint64_t a = 0,
                          uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = hash_combine(master, hash_str(tag));
    s = hash_combine(s, a);
    s = hash_combine(s, b);
    s = hash_combine(s, c);
    return StreamRng(s);
  }

  std::mt19937_64& engine() { return engine_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    return std::uniform_int_distribution<uint64_t>(0, n - 1)(engine_);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace qvrp
