#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace geomeld {

// FNV-1a 64-bit over the bytes of a string. Used wherever a stable,
// platform-independent hash of an identifier is required (temporal anchors,
// per-tile generator seeds). Never std::hash, which is unspecified.
inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// SplitMix64: tiny, fast, well-mixed. All randomness in the project flows
// through this generator so that sequences are bit-reproducible across
// platforms and builds.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Multiply-shift map; bias is O(n / 2^64).
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent stream from a base seed and a salt; streams for
// distinct salts are decorrelated by an extra mixing round.
inline uint64_t derive_seed(uint64_t base, uint64_t salt) {
    Rng mix(base ^ (salt * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull));
    return mix.next_u64();
}

}  // namespace geomeld
