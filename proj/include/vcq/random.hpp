#pragma once

#include <cstdint>
#include <random>

namespace vcq {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream)
{
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits. Unlike the std distributions
/// this is the same on every standard library.
inline double uniform01(Rng& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Modulo bias is negligible for the sizes used here.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n)
{
    return rng() % n;
}

} // namespace vcq
