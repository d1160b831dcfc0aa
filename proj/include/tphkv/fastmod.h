#pragma once

#include <cstdint>

namespace tphkv {

// Division-free x mod d for 64-bit x (Lemire, Kaser & Kurz). The 128-bit
// magic constant M = ceil(2^128 / d) is computed once per divisor; each
// reduction is then two multiplications.
class FastMod {
 public:
  FastMod() = default;
  explicit FastMod(uint64_t d) : d_(d), m_(d <= 1 ? 0 : ~static_cast<unsigned __int128>(0) / d + 1) {}

  uint64_t divisor() const { return d_; }

  uint64_t operator()(uint64_t x) const {
    unsigned __int128 low = m_ * x;
    return MulHigh(low, d_);
  }

 private:
  // High 64 bits of the 192-bit product low * d.
  static uint64_t MulHigh(unsigned __int128 low, uint64_t d) {
    unsigned __int128 bottom = (low & UINT64_MAX) * d;
    bottom >>= 64;
    unsigned __int128 top = (low >> 64) * d;
    unsigned __int128 both = bottom + top;
    return static_cast<uint64_t>(both >> 64);
  }

  uint64_t d_ = 1;
  unsigned __int128 m_ = 0;
};

// reduce(x, n) == x mod n with a freshly computed constant; use a cached
// FastMod on hot paths.
inline uint64_t Reduce(uint64_t x, uint64_t n) { return FastMod(n)(x); }

}  // namespace tphkv
