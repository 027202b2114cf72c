#pragma once

#include <cstdint>
#include <random>

namespace changeflow {

/// Seeded stream used everywhere randomness is needed.
using Rng = std::mt19937_64;

/// Derives an independent seed for stream `index` of `master`.
///
/// seed_i = splitmix64(master ^ (0x9E3779B97F4A7C15 * (index + 1))), where
/// splitmix64 is the standard 64-bit finaliser (xor-shift 30/27/31 with the
/// multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB).
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index);

double standard_normal(Rng& rng);
double uniform01(Rng& rng);

}  // namespace changeflow
