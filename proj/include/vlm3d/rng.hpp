#pragma once

#include <cmath>
#include <cstdint>

#include "vlm3d/geometry.hpp"

namespace vlm3d {

// splitmix64 step; the mixer behind every random draw in the project.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a stream tag.
// Used to give each (step, view, purpose) its own reproducible stream.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c, std::uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

// Deterministic RNG with a fixed algorithm (splitmix64 + Box-Muller), so
// streams are bit-identical across platforms and standard libraries.
// std::normal_distribution is implementation-defined and unusable here.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 bits of randomness.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; generates pairs, caches the spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * kPi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform direction on the unit sphere in n dimensions, written into out.
  template <typename Container>
  void unit_vector(Container& out) {
    double norm_sq = 0.0;
    for (auto& v : out) {
      v = normal();
      norm_sq += v * v;
    }
    if (norm_sq == 0.0) {
      out[0] = 1.0;
      norm_sq = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& v : out) v *= inv;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vlm3d
