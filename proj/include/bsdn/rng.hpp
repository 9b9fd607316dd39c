#pragma once

#include <cstdint>
#include <initializer_list>

namespace bsdn {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent stream seed for (base, keys...). Every random draw in the
/// library is keyed this way, so a step or record can be replayed in isolation.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t k : keys) {
        h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ull));
    }
    return h;
}

}  // namespace bsdn
