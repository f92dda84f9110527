#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace svtc {

using Rng = std::mt19937_64;

// splitmix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Child seed for (parent, index). Order-independent: seed i never depends on
// how many other seeds were drawn before it.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
    return mix64(mix64(parent) ^ (index * 0xD1B54A32D192ED03ull + 0x632BE59BD9B4E019ull));
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
    return derive_seed(parent, hash_tag(tag));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Uniform integer in [lo, hi] built directly on the engine output so that
// draws are identical across standard library implementations.
inline int uniform_int(Rng& rng, int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return lo + static_cast<int>(r % span);
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

// Standard normal via Marsaglia polar method; portable across toolchains.
double standard_normal(Rng& rng);

template <typename It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<int>(last - first);
    for (int i = n - 1; i > 0; --i) {
        const int j = uniform_int(rng, 0, i);
        using std::swap;
        swap(first[i], first[j]);
    }
}

// Index drawn proportionally to non-negative weights.
template <typename Range>
int weighted_index(Rng& rng, const Range& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform01(rng) * total;
    int i = 0;
    int last_positive = 0;
    for (double w : weights) {
        if (w > 0.0) {
            last_positive = i;
            if (u < w) return i;
            u -= w;
        }
        ++i;
    }
    return last_positive;
}

} // namespace svtc
