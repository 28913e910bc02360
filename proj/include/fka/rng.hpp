#ifndef FKA_RNG_HPP
#define FKA_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace fka {

// FNV-1a over (master seed, stage name). Adding stages never perturbs the
// seeds of existing stages.
inline std::uint64_t stage_seed(std::uint64_t master, std::string_view stage) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](unsigned char b) {
        h ^= b;
        h *= 1099511628211ull;
    };
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(master >> (8 * i)));
    for (char c : stage) mix(static_cast<unsigned char>(c));
    return h;
}

using Rng = std::mt19937_64;

}  // namespace fka

#endif
