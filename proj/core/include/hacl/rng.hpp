#pragma once

#include <cmath>
#include <cstdint>

namespace hacl {

/// splitmix64 stream. Self-contained so that runs are bit-reproducible
/// across standard libraries (std distributions are not pinned).
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    /// Independent deterministic stream for (seed, key...) tuples.
    template <class... Keys>
    static Rng keyed(uint64_t seed, Keys... keys) {
        uint64_t h = seed;
        ((h = mix(h ^ (0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(keys)))), ...);
        return Rng(h);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, n). Modulo bias is ~n/2^64, irrelevant at our sizes.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    int next_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Box-Muller, one value per call (no cached spare, keeps streams simple).
    double next_gauss() {
        double u = 1.0 - next_double();  // (0, 1]
        double v = next_double();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
    }

  private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

}  // namespace hacl
