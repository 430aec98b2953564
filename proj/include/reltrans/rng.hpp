#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace reltrans {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for the stream at `path` below `base`, e.g. (cell, rep, purpose).
/// Pure function of its inputs, so scheduling order never matters.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t h = splitmix64(base);
    for (auto v : path) h = splitmix64(h ^ splitmix64(v + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_stream(std::uint64_t base, std::initializer_list<std::uint64_t> path)
{
    return Rng(derive_seed(base, path));
}

/// Uniform on [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline int bernoulli(Rng& rng, double p) { return uniform01(rng) < p ? 1 : 0; }

/// Index uniform on [0, bound).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t bound)
{
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v;
    do v = rng();
    while (v >= limit);
    return v % bound;
}

} // namespace reltrans
