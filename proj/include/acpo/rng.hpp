#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace acpo {

// SplitMix64 generator. Used everywhere a stream of random numbers is needed
// so that outputs are identical across standard library implementations.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) noexcept : state_(seed) {}

    uint64_t next() noexcept {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t below(uint64_t n) noexcept {
        // Lemire-style rejection keeps the result unbiased.
        const uint64_t limit = (~uint64_t{0} / n) * n;
        uint64_t x = next();
        while (x >= limit) {
            x = next();
        }
        return x % n;
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    // Standard normal via Box-Muller; no cached spare so the stream position is
    // a pure function of the number of calls.
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    uint64_t state() const noexcept { return state_; }

private:
    uint64_t state_;
};

// 64-bit finalizer (the SplitMix64 output function) for combining seeds.
constexpr uint64_t mix64(uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr uint64_t fnv1a64(std::string_view s) noexcept {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

// Seed for a named stage or stream derived from a parent seed.
constexpr uint64_t derive_seed(uint64_t parent, std::string_view name) noexcept {
    return mix64(parent ^ mix64(fnv1a64(name)));
}

constexpr uint64_t derive_seed(uint64_t parent, uint64_t index) noexcept {
    return mix64(parent ^ mix64(index + 0x632BE59BD9B4E019ull));
}

}  // namespace acpo
