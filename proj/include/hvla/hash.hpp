#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace hvla {

inline constexpr uint64_t kFnvBasis = 1469598103934665603ULL;

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = kFnvBasis) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace hvla
