#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tphkv/fastmod.h"
#include "tphkv/packed_array.h"
#include "tphkv/status.h"

namespace tphkv::cphash {

// Two independent 64-bit hashes of one key. Both derive from the primary
// key hash through separately seeded bijective mixes.
struct HashPair {
  uint64_t h0 = 0;
  uint64_t h1 = 0;
};

HashPair MakePair(uint64_t key_hash, uint64_t seed);

struct BucketParams {
  uint16_t alpha = 0;
  uint16_t beta = 0;

  // Position of this pair in the fresh-candidate enumeration order.
  uint32_t ordinal() const { return (static_cast<uint32_t>(alpha) << 16) | beta; }
  static BucketParams FromOrdinal(uint32_t ord) {
    return {static_cast<uint16_t>(ord >> 16), static_cast<uint16_t>(ord & 0xffff)};
  }
  bool operator==(const BucketParams&) const = default;
};

struct CpHashConfig {
  double scale_c = 1.1;
  uint32_t avg_bucket_size = 5;
  double dense_fraction = 0.3;
  double dense_key_fraction = 0.6;
  uint32_t max_attempts_per_bucket = 100000;
  double growth_step = 1.05;
  // Build fails once the table would exceed max_table_factor * scale_c * N.
  double max_table_factor = 2.0;

  Status Validate() const;
};

// Threshold on (h >> 32) below which a key is routed to a dense bucket.
uint32_t DenseThreshold(double dense_key_fraction);

// Reference mapping of a key into [0, m). Uses h1 as the mapping hash.
uint32_t BucketOf(const HashPair& pair, uint32_t m, uint32_t d, double dense_key_fraction);

// (h0 + h1 * alpha + beta) mod table_size with 64-bit wrap-around before the
// reduction.
inline uint64_t PositionRaw(const HashPair& pair, BucketParams p) {
  return pair.h0 + pair.h1 * p.alpha + p.beta;
}
inline uint64_t Position(const HashPair& pair, BucketParams p, uint64_t table_size) {
  return Reduce(PositionRaw(pair, p), table_size);
}

struct BuildStats {
  uint32_t growth_steps = 0;
  uint64_t candidates_tried = 0;
  uint64_t dictionary_hits = 0;
};

// A built CPHash function. Immutable after Build/Deserialize.
class PerfectHashFn {
 public:
  PerfectHashFn() = default;

  static Result<PerfectHashFn> Build(std::span<const uint64_t> key_hashes, uint64_t seed,
                                     const CpHashConfig& config, BuildStats* stats = nullptr);

  // Slot in [0, table_size()) for any key hash. Requires table_size() > 0.
  uint64_t Evaluate(uint64_t key_hash) const {
    HashPair pair = MakePair(key_hash, seed_);
    return EvaluatePair(pair);
  }
  uint64_t EvaluatePair(const HashPair& pair) const {
    return table_mod_(PositionRaw(pair, dictionary_[bucket_index_.Get(MapBucket(pair))]));
  }

  uint32_t MapBucket(const HashPair& pair) const {
    if (dense_buckets_ > 0 && (pair.h1 >> 32) < dense_threshold_) return static_cast<uint32_t>(dense_mod_(pair.h1));
    return dense_buckets_ + static_cast<uint32_t>(sparse_mod_(pair.h1));
  }

  uint64_t seed() const { return seed_; }
  uint64_t num_keys() const { return num_keys_; }
  uint64_t table_size() const { return table_size_; }
  uint32_t num_buckets() const { return num_buckets_; }
  uint32_t dense_buckets() const { return dense_buckets_; }
  uint32_t dense_threshold() const { return dense_threshold_; }
  const std::vector<BucketParams>& dictionary() const { return dictionary_; }
  uint32_t dictionary_index(uint32_t bucket) const { return bucket_index_.Get(bucket); }
  BucketParams params(uint32_t bucket) const { return dictionary_[bucket_index_.Get(bucket)]; }

  void AppendTo(std::string* dst) const;
  std::string Serialize() const {
    std::string out;
    AppendTo(&out);
    return out;
  }
  static Result<PerfectHashFn> Deserialize(std::string_view in);

  // Resident bytes of the evaluation structures.
  size_t MemoryBytes() const;

 private:
  void InitReducers();

  uint64_t seed_ = 0;
  uint64_t num_keys_ = 0;
  uint64_t table_size_ = 0;
  uint32_t num_buckets_ = 0;
  uint32_t dense_buckets_ = 0;
  uint32_t dense_threshold_ = 0;
  std::vector<BucketParams> dictionary_;
  PackedArray bucket_index_;
  FastMod table_mod_;
  FastMod dense_mod_;
  FastMod sparse_mod_;
};

}  // namespace tphkv::cphash
