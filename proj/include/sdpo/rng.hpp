// Copyright (C) 2026 The sdpo-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace sdpo {

/// SplitMix64 (Steele, Lea, Flood 2014), used for every random stream in the
/// library so that datasets and runs are reproducible from a seed in any
/// language.
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// Derived quantities:
///   uniform()   = (next() >> 11) * 2^-53                   in [0, 1)
///   below(n)    = rejection-sampled next() % n              unbiased
///   gaussian()  = Box-Muller, u1 = 1 - uniform(), u2 = uniform();
///                 returns r*cos(2 pi u2) and caches r*sin(2 pi u2) for the
///                 next call, r = sqrt(-2 ln u1)
///
/// Sub-streams are derived with `Rng::derive(seed, stream)`, which mixes the
/// stream id into the seed through one SplitMix64 step.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

    static Rng derive(std::uint64_t seed, std::uint64_t stream) noexcept {
        Rng mixer(seed ^ (stream * 0xD1B54A32D192ED03ULL));
        return Rng(mixer.next());
    }

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

    double gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    void fill_gaussian(std::span<double> out) noexcept {
        for (double& v : out) v = gaussian();
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace sdpo
