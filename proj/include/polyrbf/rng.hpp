#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>

namespace polyrbf {

// Counter-based stream: every draw is a pure function of (seed, stream name,
// counter), so parallel generation over any voxel/frame partition reproduces
// the sequential result bit for bit.
class CounterRng {
public:
  CounterRng(std::uint64_t seed, std::string_view stream)
      : key_(mix(seed ^ fnv1a(stream))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t bits(std::uint64_t counter) const { return mix(key_ + counter); }

  // in [0, 1)
  double uniform(std::uint64_t counter) const {
    return double(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Box-Muller pair from counters 2c and 2c+1; first uniform kept away from 0.
  std::pair<double, double> gaussian_pair(std::uint64_t counter) const {
    double u1 = (double(bits(2 * counter) >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform(2 * counter + 1);
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

  double gaussian(std::uint64_t counter) const { return gaussian_pair(counter).first; }

  // Fisher-Yates over indices [0, n) driven by counters from `base`.
  template <typename Vec>
  void shuffle(Vec& v, std::uint64_t base = 0) const {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = bits(base + i) % i;
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::uint64_t key_;
};

} // namespace polyrbf
