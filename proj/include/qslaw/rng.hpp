// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace qslaw {

// Deterministic splitmix64 generator. Used instead of <random> engines so
// that streams are a pure function of (seed, purpose, index) and stay stable
// across standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; one value per call, cache for the pair.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Mixes a seed with a stream tag and index so independent streams never
// overlap. fnv1a over the tag keeps call sites readable.
inline std::uint64_t stream_seed(std::uint64_t seed, const char* tag, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;
    for (const char* p = tag; *p; ++p) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(*p));
        h *= 1099511628211ull;
    }
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

}  // namespace qslaw
