#pragma once

#include <cstdint>
#include <string_view>

namespace dygen {

/// FNV-1a 64-bit content fingerprint; used for config hashes and for the
/// byte-level determinism check on results artifacts.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace dygen
