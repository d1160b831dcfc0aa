#include "tphkv/cphash.h"

#include <algorithm>
#include <cmath>

#include "tphkv/coding.h"
#include "tphkv/crc32c.h"
#include "tphkv/hash.h"

namespace tphkv::cphash {
namespace {

constexpr char kMagic[4] = {'C', 'P', 'H', '1'};
constexpr size_t kBatch = 8;

uint64_t InitialTableSize(uint64_t n, double scale_c) {
  if (n == 0) return 0;
  auto size = static_cast<uint64_t>(std::ceil(scale_c * static_cast<double>(n)));
  return std::max(size, n);
}

// Occupancy bitmap over the slot array.
class Occupancy {
 public:
  explicit Occupancy(uint64_t slots) : bits_((slots + 63) / 64, 0) {}
  bool Test(uint64_t i) const { return (bits_[i >> 6] >> (i & 63)) & 1; }
  void Set(uint64_t i) { bits_[i >> 6] |= uint64_t{1} << (i & 63); }
  void Clear(uint64_t i) { bits_[i >> 6] &= ~(uint64_t{1} << (i & 63)); }

 private:
  std::vector<uint64_t> bits_;
};

// Places every key of one bucket with the candidate parameters, or leaves
// the occupancy untouched and returns false. Positions are computed in
// fixed-width batches before any slot is tested.
bool TryPlace(std::span<const HashPair> keys, BucketParams p, const FastMod& mod, Occupancy* occ,
              std::vector<uint64_t>* scratch) {
  scratch->resize(keys.size());
  uint64_t* pos = scratch->data();
  size_t placed = 0;
  for (size_t base = 0; base < keys.size(); base += kBatch) {
    size_t n = std::min(kBatch, keys.size() - base);
    for (size_t i = 0; i < n; ++i) pos[base + i] = mod(PositionRaw(keys[base + i], p));
    for (size_t i = 0; i < n; ++i) {
      uint64_t s = pos[base + i];
      if (occ->Test(s)) {
        for (size_t j = 0; j < placed; ++j) occ->Clear(pos[j]);
        return false;
      }
      occ->Set(s);
      ++placed;
    }
  }
  return true;
}

}  // namespace

HashPair MakePair(uint64_t key_hash, uint64_t seed) {
  return HashPair{Fmix64(key_hash ^ seed), Fmix64(key_hash ^ Fmix64(seed + 0x9e3779b97f4a7c15ULL))};
}

Status CpHashConfig::Validate() const {
  if (!(scale_c >= 1.0)) return Status::InvalidArgument("scale_c must be >= 1.0");
  if (avg_bucket_size == 0) return Status::InvalidArgument("avg_bucket_size must be positive");
  if (!(dense_fraction > 0.0 && dense_fraction < 1.0)) return Status::InvalidArgument("dense_fraction must be in (0,1)");
  if (!(dense_key_fraction > 0.0 && dense_key_fraction < 1.0)) {
    return Status::InvalidArgument("dense_key_fraction must be in (0,1)");
  }
  if (!(dense_key_fraction > dense_fraction)) {
    return Status::InvalidArgument("dense_key_fraction must exceed dense_fraction");
  }
  if (max_attempts_per_bucket == 0) return Status::InvalidArgument("max_attempts_per_bucket must be positive");
  if (!(growth_step > 1.0)) return Status::InvalidArgument("growth_step must be > 1.0");
  if (!(max_table_factor >= 1.0)) return Status::InvalidArgument("max_table_factor must be >= 1.0");
  return Status::OK();
}

uint32_t DenseThreshold(double dense_key_fraction) {
  double t = std::floor(dense_key_fraction * 4294967296.0);
  if (t <= 0) return 0;
  if (t >= 4294967295.0) return UINT32_MAX;
  return static_cast<uint32_t>(t);
}

uint32_t BucketOf(const HashPair& pair, uint32_t m, uint32_t d, double dense_key_fraction) {
  const uint64_t h = pair.h1;
  if (d > 0 && (h >> 32) < DenseThreshold(dense_key_fraction)) return static_cast<uint32_t>(h % d);
  return d + static_cast<uint32_t>(h % (m - d));
}

void PerfectHashFn::InitReducers() {
  table_mod_ = FastMod(table_size_ == 0 ? 1 : table_size_);
  dense_mod_ = FastMod(dense_buckets_ == 0 ? 1 : dense_buckets_);
  uint32_t sparse = num_buckets_ - dense_buckets_;
  sparse_mod_ = FastMod(sparse == 0 ? 1 : sparse);
}

Result<PerfectHashFn> PerfectHashFn::Build(std::span<const uint64_t> key_hashes, uint64_t seed,
                                           const CpHashConfig& config, BuildStats* stats) {
  TPHKV_RETURN_IF_ERROR(config.Validate());
  const uint64_t n = key_hashes.size();
  {
    std::vector<uint64_t> sorted(key_hashes.begin(), key_hashes.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      return Status(Code::kDuplicateKeyHash, "duplicate key hash in build set");
    }
  }

  PerfectHashFn f;
  f.seed_ = seed;
  f.num_keys_ = n;
  f.table_size_ = InitialTableSize(n, config.scale_c);
  if (n == 0) {
    f.bucket_index_ = PackedArray(0, 0);
    f.InitReducers();
    return f;
  }
  f.num_buckets_ = static_cast<uint32_t>((n + config.avg_bucket_size - 1) / config.avg_bucket_size);
  f.dense_buckets_ = static_cast<uint32_t>(std::floor(config.dense_fraction * f.num_buckets_));
  if (f.dense_buckets_ >= f.num_buckets_) f.dense_buckets_ = f.num_buckets_ - 1;
  f.dense_threshold_ = DenseThreshold(config.dense_key_fraction);
  f.InitReducers();

  // Mapping: group keys by bucket (counting sort keeps input order within a
  // bucket).
  const uint32_t m = f.num_buckets_;
  std::vector<HashPair> pairs(n);
  std::vector<uint32_t> bucket_of(n);
  std::vector<uint32_t> bucket_start(m + 1, 0);
  for (uint64_t i = 0; i < n; ++i) {
    pairs[i] = MakePair(key_hashes[i], seed);
    bucket_of[i] = f.MapBucket(pairs[i]);
    ++bucket_start[bucket_of[i] + 1];
  }
  uint32_t max_size = 0;
  for (uint32_t b = 0; b < m; ++b) max_size = std::max(max_size, bucket_start[b + 1]);
  for (uint32_t b = 0; b < m; ++b) bucket_start[b + 1] += bucket_start[b];
  std::vector<HashPair> grouped(n);
  {
    std::vector<uint32_t> cursor(bucket_start.begin(), bucket_start.end() - 1);
    for (uint64_t i = 0; i < n; ++i) grouped[cursor[bucket_of[i]]++] = pairs[i];
  }
  pairs.clear();
  pairs.shrink_to_fit();
  bucket_of.clear();
  bucket_of.shrink_to_fit();

  // Ordering: non-increasing size, ties by bucket index. Empty buckets are
  // left out of the search and keep dictionary entry 0.
  std::vector<uint32_t> order;
  {
    std::vector<uint32_t> by_size(max_size + 2, 0);
    for (uint32_t b = 0; b < m; ++b) ++by_size[max_size - (bucket_start[b + 1] - bucket_start[b])];
    uint32_t acc = 0;
    for (auto& c : by_size) {
      uint32_t t = c;
      c = acc;
      acc += t;
    }
    order.resize(m);
    for (uint32_t b = 0; b < m; ++b) order[by_size[max_size - (bucket_start[b + 1] - bucket_start[b])]++] = b;
    while (!order.empty() && bucket_start[order.back() + 1] == bucket_start[order.back()]) order.pop_back();
  }

  const double ceiling = config.max_table_factor * config.scale_c * static_cast<double>(n);
  BuildStats local_stats;
  std::vector<uint32_t> assignment(m, 0);
  std::vector<uint64_t> scratch;

  // Searching.
  for (;;) {
    Occupancy occ(f.table_size_);
    std::vector<BucketParams> dictionary;
    std::vector<bool> in_dictionary;
    std::fill(assignment.begin(), assignment.end(), 0);
    bool failed = false;
    const uint64_t beta_limit = std::min<uint64_t>(f.table_size_, 0x10000);

    for (uint32_t b : order) {
      std::span<const HashPair> keys(grouped.data() + bucket_start[b], bucket_start[b + 1] - bucket_start[b]);
      uint32_t attempts = 0;
      bool placed = false;
      for (uint32_t i = 0; i < dictionary.size() && attempts < config.max_attempts_per_bucket; ++i) {
        ++attempts;
        if (TryPlace(keys, dictionary[i], f.table_mod_, &occ, &scratch)) {
          assignment[b] = i;
          placed = true;
          ++local_stats.dictionary_hits;
          break;
        }
      }
      for (uint64_t ord = 0; !placed && attempts < config.max_attempts_per_bucket && ord <= UINT32_MAX; ++ord) {
        // Offsets at or past the slot count only repeat earlier shifts.
        if ((ord & 0xffff) >= beta_limit) {
          ord |= 0xffff;
          continue;
        }
        if (ord < in_dictionary.size() && in_dictionary[ord]) continue;
        ++attempts;
        BucketParams p = BucketParams::FromOrdinal(static_cast<uint32_t>(ord));
        if (TryPlace(keys, p, f.table_mod_, &occ, &scratch)) {
          assignment[b] = static_cast<uint32_t>(dictionary.size());
          dictionary.push_back(p);
          if (in_dictionary.size() <= ord) in_dictionary.resize(ord + 1, false);
          in_dictionary[ord] = true;
          placed = true;
        }
      }
      local_stats.candidates_tried += attempts;
      if (!placed) {
        failed = true;
        break;
      }
    }

    if (!failed) {
      if (dictionary.empty()) dictionary.push_back(BucketParams{});
      f.dictionary_ = std::move(dictionary);
      f.bucket_index_ = PackedArray(m, BitsFor(f.dictionary_.size() - 1));
      for (uint32_t b = 0; b < m; ++b) f.bucket_index_.Set(b, assignment[b]);
      break;
    }

    // Additional space allocation: enlarge the slot array and search again.
    uint64_t grown = static_cast<uint64_t>(std::ceil(static_cast<double>(f.table_size_) * config.growth_step));
    if (grown <= f.table_size_) grown = f.table_size_ + 1;
    if (static_cast<double>(grown) > ceiling) {
      return Status(Code::kBuildFailure, "slot array exceeded ceiling of " + std::to_string(ceiling));
    }
    f.table_size_ = grown;
    f.InitReducers();
    ++local_stats.growth_steps;
  }

  if (stats != nullptr) *stats = local_stats;
  return f;
}

void PerfectHashFn::AppendTo(std::string* dst) const {
  const size_t start = dst->size();
  dst->append(kMagic, 4);
  PutFixed64(dst, seed_);
  PutFixed64(dst, num_keys_);
  PutFixed64(dst, table_size_);
  PutFixed32(dst, num_buckets_);
  PutFixed32(dst, dense_buckets_);
  PutFixed32(dst, dense_threshold_);
  PutFixed32(dst, static_cast<uint32_t>(dictionary_.size()));
  for (const auto& p : dictionary_) {
    PutFixed16(dst, p.alpha);
    PutFixed16(dst, p.beta);
  }
  for (uint32_t b = 0; b < num_buckets_; ++b) PutVarint64(dst, bucket_index_.Get(b));
  PutFixed32(dst, crc32c::Value(dst->data() + start, dst->size() - start));
}

Result<PerfectHashFn> PerfectHashFn::Deserialize(std::string_view in) {
  if (in.size() < 4 + 8 * 3 + 4 * 4 + 4) return Status::Truncated("perfect hash function too short");
  const uint32_t stored_crc = DecodeFixed32(in.data() + in.size() - 4);
  if (crc32c::Value(in.data(), in.size() - 4) != stored_crc) {
    return Status::ChecksumMismatch("perfect hash function checksum");
  }
  Decoder dec(in.substr(0, in.size() - 4));
  if (dec.Bytes(4) != std::string_view(kMagic, 4)) return Status(Code::kVersionMismatch, "bad CPH magic");
  PerfectHashFn f;
  f.seed_ = dec.U64();
  f.num_keys_ = dec.U64();
  f.table_size_ = dec.U64();
  f.num_buckets_ = dec.U32();
  f.dense_buckets_ = dec.U32();
  f.dense_threshold_ = dec.U32();
  uint32_t dict_len = dec.U32();
  if (!dec.ok() || dict_len > dec.remaining() / 4) return Status::Truncated("perfect hash dictionary");
  if (f.num_buckets_ > 0 && (f.dense_buckets_ >= f.num_buckets_ || dict_len == 0 || f.table_size_ == 0)) {
    return Status(Code::kCorruptIndex, "inconsistent perfect hash header");
  }
  f.dictionary_.resize(dict_len);
  for (auto& p : f.dictionary_) {
    p.alpha = dec.U16();
    p.beta = dec.U16();
  }
  f.bucket_index_ = PackedArray(f.num_buckets_, dict_len == 0 ? 0 : BitsFor(dict_len - 1));
  for (uint32_t b = 0; b < f.num_buckets_; ++b) {
    uint64_t idx = dec.Varint();
    if (idx >= dict_len) return Status(Code::kCorruptIndex, "dictionary index out of range");
    f.bucket_index_.Set(b, static_cast<uint32_t>(idx));
  }
  if (!dec.ok()) return Status::Truncated("perfect hash bucket indices");
  if (dec.remaining() != 0) return Status(Code::kCorruptIndex, "trailing bytes after perfect hash");
  f.InitReducers();
  return f;
}

size_t PerfectHashFn::MemoryBytes() const {
  return sizeof(PerfectHashFn) + dictionary_.capacity() * sizeof(BucketParams) + bucket_index_.MemoryBytes();
}

}  // namespace tphkv::cphash
