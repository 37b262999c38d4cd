#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsim {

using rng_engine = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a named sub-stream seed from a root seed and a list of tags
// (round, client id, purpose code, ...). Independent of call order, so
// streams consumed from worker threads stay reproducible.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = mix64(root);
    for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
    return h;
}

inline rng_engine make_stream(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
    return rng_engine(derive_seed(root, tags));
}

// Purpose codes for derive_seed.
namespace stream {
inline constexpr std::uint64_t synthetic_means = 0x11;
inline constexpr std::uint64_t synthetic_samples = 0x12;
inline constexpr std::uint64_t partition = 0x21;
inline constexpr std::uint64_t split = 0x22;
inline constexpr std::uint64_t init = 0x31;
inline constexpr std::uint64_t select_clustered = 0x41;
inline constexpr std::uint64_t select_random = 0x42;
inline constexpr std::uint64_t local_train = 0x51;
}  // namespace stream

}  // namespace fedsim
