#pragma once

#include <cstdint>
#include <random>

namespace udma {

// splitmix64: cheap stateless mixer used to derive independent substream
// seeds from one master seed. Substreams keyed by (seed, index) are stable
// regardless of evaluation order, which keeps parallel generation and
// serial generation bit-identical.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream = 0) {
    return std::mt19937_64(derive_seed(master, stream));
}

}  // namespace udma
