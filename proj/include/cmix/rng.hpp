#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cmix {

/// Seeded generator with distribution helpers whose output does not depend on
/// the standard library implementation (std::*_distribution is unspecified).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Rejection keeps the draw exactly uniform.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    /// Derive an independent stream, e.g. one per entity.
    Rng fork(std::uint64_t salt) { return Rng(mix(engine_() ^ mix(salt))); }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace cmix
