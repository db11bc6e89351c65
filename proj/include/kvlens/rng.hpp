#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace kvlens {

// Deterministic, platform-independent RNG (splitmix64). All randomness in the
// project flows through this type so that artifacts are reproducible
// byte-for-byte from a seed, independent of the standard library's
// distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed), root_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Standard normal via Box-Muller. Consumes exactly two uniforms per call.
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Child stream for hierarchical seeding (experiment seed -> per-episode
    // seeds). Children with distinct salts are independent of each other and
    // of the parent's future draws.
    Rng child(uint64_t salt) const {
        uint64_t z = root_ ^ (0x9e3779b97f4a7c15ull * (salt + 0x632be59bd9b4e019ull));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

    uint64_t root_seed() const { return root_; }

  private:
    uint64_t state_;
    uint64_t root_;
};

} // namespace kvlens
