#pragma once

// Counter-based PRNG. Output is a pure function of (seed, stream, counter), so
// parallel guess loops get independent streams and test vectors stay
// bit-reproducible across platforms. kRngVersion pins the mixing function;
// bump it if the mixer ever changes.

#include <cmath>
#include <cstdint>

namespace bitopt {

inline constexpr int kRngVersion = 1;

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix64(seed ^ (0x8badf00ddefec8edULL * (stream + 1)))) {}

  std::uint64_t at(std::uint64_t counter) const {
    return mix64(key_ + 0x9e3779b97f4a7c15ULL * (counter + 1));
  }

  std::uint64_t next_u64() { return at(counter_++); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound) {
    // Multiply-shift reduction; bias is negligible for bound << 2^64.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  // Standard normal via Box-Muller (consumes two outputs; cache the pair).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double(), u2 = next_double();
    if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  bool next_bool() { return (next_u64() & 1) != 0; }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0;
  bool have_spare_ = false;
};

}  // namespace bitopt
