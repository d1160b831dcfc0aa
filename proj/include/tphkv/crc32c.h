#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace tphkv::crc32c {

// CRC-32C (Castagnoli polynomial, reflected), software table implementation.
uint32_t Extend(uint32_t crc, const char* data, size_t n);

inline uint32_t Value(const char* data, size_t n) { return Extend(0, data, n); }
inline uint32_t Value(std::string_view s) { return Extend(0, s.data(), s.size()); }

}  // namespace tphkv::crc32c
