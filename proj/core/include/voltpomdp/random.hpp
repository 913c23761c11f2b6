#pragma once

#include <cstdint>
#include <random>

namespace voltpomdp {

using Rng = std::mt19937_64;

// Independent, reproducible stream for (seed, stream) pairs.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
    return Rng(seq);
}

}  // namespace voltpomdp
