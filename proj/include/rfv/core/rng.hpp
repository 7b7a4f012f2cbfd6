#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace rfv {

using Rng = std::mt19937_64;

/// Independent stream for a (seed, stream) pair; used to give workers and trials
/// their own reproducible generators.
Rng make_stream(std::uint64_t seed, std::uint64_t stream);

std::string serialize_rng(const Rng &rng);
Rng deserialize_rng(const std::string &state);

/// 64-bit FNV-1a, stable across platforms.
std::uint64_t fnv1a(const std::string &bytes);

inline double uniform01(Rng &rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
inline int uniform_int(Rng &rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

} // namespace rfv
