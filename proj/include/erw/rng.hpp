#pragma once

#include <cstdint>

#include "erw/common.hpp"

// Counter-based randomness. Everything stochastic in this library is driven
// by splitmix64: site-to-stack assignment hashes (seed, coordinates), and
// per-replica walk streams are derived as chain(seed, tag, replica). The
// mixer is part of the output contract (manifests record "splitmix64-v1"),
// so runs are bit-reproducible across platforms and parallelism widths.

namespace erw {

inline constexpr const char* kRngMixerName = "splitmix64-v1";
inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer (Stafford mix13). Full-avalanche 64-bit bijection.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Folds one word into a stream key. The input word is avalanched before
// combining so low-entropy words (small coordinates, replica indices)
// land far apart.
inline std::uint64_t fold(std::uint64_t key, std::uint64_t word) {
    return mix64(key ^ mix64(word + kGolden));
}

// Derivation tags keep unrelated streams (environment sampling vs. walk
// steps) independent even for equal seeds and replica indices.
enum : std::uint64_t {
    kTagSiteStack = 0x5349u, // site -> cookie stack assignment
    kTagWalk = 0x574bu,      // per-replica walk stream
    kTagEnv = 0x454eu,       // per-replica environment seed (annealed mode)
};

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    return fold(fold(seed, tag), index);
}

// Hash of (seed, site) onto [0,1). Used for i.i.d. site-stack assignment.
inline double site_unit_hash(std::uint64_t seed, const Site& site) {
    std::uint64_t k = fold(seed, kTagSiteStack);
    for (int i = 0; i < site.dim; ++i)
        k = fold(k, static_cast<std::uint64_t>(site[i]));
    k = fold(k, static_cast<std::uint64_t>(site.dim));
    return static_cast<double>(k >> 11) * 0x1.0p-53;
}

struct SplitMix64 {
    std::uint64_t state = 0;

    explicit SplitMix64(std::uint64_t s = 0) : state(s) {}

    std::uint64_t next_u64() {
        state += kGolden;
        return mix64(state);
    }

    // Uniform double in [0,1) with 53 random bits.
    double next_u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
};

// Hash functor for unordered containers keyed by Site.
struct SiteHasher {
    std::size_t operator()(const Site& s) const {
        std::uint64_t k = mix64(static_cast<std::uint64_t>(s.dim));
        for (int i = 0; i < s.dim; ++i) k = fold(k, static_cast<std::uint64_t>(s[i]));
        return static_cast<std::size_t>(k);
    }
};

inline SplitMix64 walk_stream(std::uint64_t seed, std::uint64_t replica) {
    return SplitMix64(stream_key(seed, kTagWalk, replica));
}

// Environment seed for a replica. Annealed runs draw a fresh environment per
// replica; quenched runs share the replica-0 environment.
inline std::uint64_t env_seed(std::uint64_t seed, std::uint64_t replica, bool quenched) {
    return stream_key(seed, kTagEnv, quenched ? 0 : replica);
}

} // namespace erw
