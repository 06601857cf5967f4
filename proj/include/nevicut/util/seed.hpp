#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace nevicut {

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for a named stream and indices, so each stochastic component
/// draws from its own reproducible sequence.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix64(seed);
    for (auto p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
    return s;
}

/// FNV-1a, used for config hashes and checkpoint ids.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t eta_batch = 2;
inline constexpr std::uint64_t base_z = 3;
inline constexpr std::uint64_t units = 4;
inline constexpr std::uint64_t sample = 5;
inline constexpr std::uint64_t mcmc = 6;
inline constexpr std::uint64_t simulate = 7;
inline constexpr std::uint64_t upstream = 8;
inline constexpr std::uint64_t train = 9;
inline constexpr std::uint64_t warm_start = 10;
}  // namespace streams

}  // namespace nevicut
