#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tphkv/coding.h"

namespace tphkv {

// Fixed-width unsigned integers (1..32 bits) packed into 64-bit words.
class PackedArray {
 public:
  PackedArray() = default;
  PackedArray(size_t size, unsigned width)
      : size_(size), width_(width), words_((size * width + 63) / 64 + 1, 0) {}

  size_t size() const { return size_; }
  unsigned width() const { return width_; }

  uint32_t Get(size_t i) const {
    if (width_ == 0) return 0;
    size_t bit = i * width_;
    size_t w = bit >> 6;
    unsigned off = bit & 63;
    uint64_t v = words_[w] >> off;
    if (off + width_ > 64) v |= words_[w + 1] << (64 - off);
    return static_cast<uint32_t>(v & Mask());
  }

  void Set(size_t i, uint32_t value) {
    if (width_ == 0) return;
    size_t bit = i * width_;
    size_t w = bit >> 6;
    unsigned off = bit & 63;
    uint64_t v = value & Mask();
    words_[w] = (words_[w] & ~(Mask() << off)) | (v << off);
    if (off + width_ > 64) {
      unsigned spill = off + width_ - 64;
      uint64_t hi_mask = (uint64_t{1} << spill) - 1;
      words_[w + 1] = (words_[w + 1] & ~hi_mask) | (v >> (64 - off));
    }
  }

  // Bytes needed to serialize the payload: ceil(size * width / 8).
  size_t PayloadBytes() const { return (size_ * width_ + 7) / 8; }
  size_t MemoryBytes() const { return words_.size() * sizeof(uint64_t); }

  void AppendPayload(std::string* dst) const {
    size_t n = PayloadBytes();
    for (size_t i = 0; i < n; ++i) dst->push_back(static_cast<char>(words_[i >> 3] >> (8 * (i & 7))));
  }

  static PackedArray FromPayload(size_t size, unsigned width, std::string_view payload) {
    PackedArray a(size, width);
    size_t n = a.PayloadBytes();
    for (size_t i = 0; i < n && i < payload.size(); ++i) {
      a.words_[i >> 3] |= static_cast<uint64_t>(static_cast<unsigned char>(payload[i])) << (8 * (i & 7));
    }
    return a;
  }

  bool operator==(const PackedArray&) const = default;

 private:
  uint64_t Mask() const { return width_ >= 64 ? ~uint64_t{0} : (uint64_t{1} << width_) - 1; }

  size_t size_ = 0;
  unsigned width_ = 0;
  std::vector<uint64_t> words_{0};
};

inline unsigned BitsFor(uint64_t max_value) {
  unsigned bits = 0;
  while (max_value > 0) {
    ++bits;
    max_value >>= 1;
  }
  return bits;
}

}  // namespace tphkv
