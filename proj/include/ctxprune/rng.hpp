#pragma once

#include <cstdint>
#include <random>

namespace ctxprune {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and two stream indices
/// (splitmix64 finalizer). Used so that per-episode and per-cell streams do not
/// depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(base) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

}  // namespace ctxprune
