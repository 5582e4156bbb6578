#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace damgt {

// All randomness in the library flows through these helpers. std::mt19937_64
// output is fixed by the standard; the distribution transforms below are
// hand-specified so results are bit-identical across platforms and toolchains
// (std::uniform_*_distribution is implementation-defined).

using Rng = std::mt19937_64;

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a stream seed from a base seed and up to two tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0, std::uint64_t b = 0) {
    return mix64(mix64(mix64(base) ^ a) ^ b);
}

// Uniform in [0, 1) with 53-bit resolution.
inline double uniform_double(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Unbiased uniform index in [0, n). n must be >= 1.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return static_cast<std::size_t>(r % un);
}

// Standard normal via Box-Muller (cosine branch; two draws per call).
inline double normal_double(Rng& rng) {
    double u1;
    do {
        u1 = uniform_double(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform_double(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Fisher-Yates shuffle with the fixed index transform above.
template <class T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = uniform_index(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace damgt
