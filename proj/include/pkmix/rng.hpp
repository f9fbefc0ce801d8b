#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace pkmix {

// SplitMix64 finalizer. Used to derive independent sub-stream seeds from a
// parent seed and a tag.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
    return mix_seed(parent ^ mix_seed(tag + 0x632be59bd9b4e019ULL));
}

/// Portable random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The distribution layer is implemented here rather than taken from
/// <random>, because the standard distributions are implementation-defined and
/// would make seeded runs differ across standard libraries:
///   - uniform01: top 53 bits of one engine draw, scaled by 2^-53
///   - below(n):  rejection sampling on the largest multiple of n (unbiased)
///   - normal:    Box-Muller, both variates used in turn
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        std::uint64_t draw;
        do {
            draw = engine_();
        } while (draw >= limit);
        return draw % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace pkmix
