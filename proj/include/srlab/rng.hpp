// SPDX-License-Identifier: Apache-2.0
//
// Deterministic, platform-independent randomness. Everything that draws
// random numbers in this project goes through SplitMix64 so that runs are
// bit-reproducible from a single integer seed, independent of the standard
// library's distribution implementations.

#pragma once

#include <cmath>
#include <cstdint>

namespace srlab::rng {

// SplitMix64 (Steele, Lea, Flood). Full 2^64 period, passes BigCrush.
struct SplitMix64 {
    std::uint64_t state = 0;

    constexpr explicit SplitMix64(std::uint64_t seed) noexcept : state(seed) {}

    constexpr std::uint64_t next() noexcept {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
};

// Stable 64-bit combine used to derive stream seeds from structured
// coordinates (seed, step, sample, layer, ...). Documented contract:
//   combine(h, v) = finalizer of SplitMix64 applied to h + GOLDEN + v.
// Sequential folds of this function define every derived seed in the
// project, so results are reproducible across implementations.
constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) noexcept {
    std::uint64_t z = h + 0x9E3779B97F4A7C15ull + v;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

template <typename... Rest>
constexpr std::uint64_t seed_mix(std::uint64_t h, std::uint64_t v, Rest... rest) noexcept {
    if constexpr (sizeof...(rest) == 0) {
        return hash_combine(h, v);
    } else {
        return seed_mix(hash_combine(h, v), static_cast<std::uint64_t>(rest)...);
    }
}

// General-purpose generator for datasets, batch sampling and Monte Carlo
// trials. uniform01() maps the top 53 bits onto [0,1).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) noexcept : core_(seed) {}

    std::uint64_t next_u64() noexcept { return core_.next(); }

    double uniform01() noexcept {
        return static_cast<double>(core_.next() >> 11) * 0x1.0p-53;
    }

    // Unbiased-to-2^-64 integer in [0, n). Lemire multiply-shift.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(core_.next()) * n) >> 64);
    }

    // Box-Muller with the sine value cached for the next call.
    double gaussian() noexcept {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

  private:
    SplitMix64 core_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

} // namespace srlab::rng
