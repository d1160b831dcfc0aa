#pragma once

#include <cstdint>
#include <string_view>

namespace tphkv {

// 64-bit finalizer from MurmurHash3; a bijection on uint64_t.
constexpr uint64_t Fmix64(uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

// MurmurHash64A over the key bytes. Primary key hash: feeds the perfect
// hash functions and the signature.
uint64_t MurmurHash64(std::string_view key, uint64_t seed);

// DJB (times-33) over the key bytes with a seeded start value and a final
// avalanche. Secondary hash: search keys and segment selection.
uint64_t DjbHash64(std::string_view key, uint64_t seed);

// Both hashes of one key, computed once per operation.
struct KeyDigest {
  uint64_t hash = 0;  // primary
  uint64_t h2 = 0;    // secondary

  uint32_t search_key() const { return static_cast<uint32_t>(h2 >> 32); }
};

inline KeyDigest DigestKey(std::string_view key, uint64_t seed) {
  return KeyDigest{MurmurHash64(key, seed), DjbHash64(key, seed ^ 0x5bd1e9955bd1e995ULL)};
}

}  // namespace tphkv
