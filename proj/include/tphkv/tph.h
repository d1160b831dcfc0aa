#pragma once

// In-memory runtime over one TPH: a group of piece files sharing one global
// index held by the newest (head) piece.

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tphkv/hash.h"
#include "tphkv/io.h"
#include "tphkv/piece_format.h"
#include "tphkv/status.h"

namespace tphkv {

enum class LookupState { kFound, kNotFound, kDeleted };

// Manifest view of one TPH.
struct TphMeta {
  uint64_t tph_id = 0;
  uint32_t level = 0;
  uint32_t index = 0;                    // position within its level
  uint64_t search_lo = 0;                // [lo, hi) over 32-bit search keys
  uint64_t search_hi = uint64_t{1} << 32;
  std::vector<uint64_t> piece_seqs;      // oldest first; head last
  uint64_t live_keys = 0;                // keys in the global fn
  uint64_t live_bytes = 0;               // key + value bytes of current records
  uint64_t file_bytes = 0;               // sum of piece file sizes

  bool empty() const { return piece_seqs.empty(); }
  bool Contains(uint32_t search_key) const { return search_key >= search_lo && search_key < search_hi; }
};

std::string TphDirName(uint64_t tph_id);
std::string PieceFileName(uint64_t seq);

class TphIterator;

class Tph : public std::enable_shared_from_this<Tph> {
 public:
  // `dir` is the TPH's own directory (holding <seq>.ph files).
  static Result<std::shared_ptr<const Tph>> Load(const TphMeta& meta, const std::string& dir, uint64_t hash_seed,
                                                 bool direct_io, std::shared_ptr<IoStats> stats);

  const TphMeta& meta() const { return meta_; }
  bool empty() const { return pieces_.empty(); }
  uint64_t hash_seed() const { return hash_seed_; }

  // Two-tier lookup; at most one block read.
  Status Get(std::string_view key, const KeyDigest& digest, LookupState* state, std::string* value) const;
  Status Get(std::string_view key, LookupState* state, std::string* value) const {
    return Get(key, DigestKey(key, hash_seed_), state, value);
  }

  // Resident-only part of a lookup: global slot, signature test and piece.
  struct Probe {
    uint64_t slot = 0;
    bool signature_match = false;
    uint32_t piece = piece::kInvalidPiece;
  };
  Probe ProbeIndex(uint64_t key_hash) const;

  // Yields comparator-ordered current records. Tombstones are skipped unless
  // `include_tombstones`.
  std::unique_ptr<TphIterator> NewIterator(bool include_tombstones = false) const;

  const piece::GlobalIndexSection& global() const { return global_; }
  const std::vector<std::unique_ptr<piece::PieceReader>>& pieces() const { return pieces_; }
  const piece::PieceReader& head() const { return *pieces_.back(); }
  const std::vector<piece::Sample>& samples() const { return samples_; }
  uint32_t sample_interval() const { return sample_interval_; }
  uint64_t indexed_records() const { return indexed_records_; }

  // Sorted locator array, read from the head piece on first use.
  Result<std::shared_ptr<const std::vector<uint64_t>>> Locators() const;

  // Reads the record a locator names (one block read).
  Status ReadLocator(uint64_t packed, IoPurpose purpose, piece::Block* block, piece::EntryView* entry) const;

  // Global index + samples + every piece's local fns and block offset tables.
  size_t ResidentBytes() const;

 private:
  Tph() = default;

  TphMeta meta_;
  uint64_t hash_seed_ = 0;
  std::shared_ptr<IoStats> stats_;
  std::vector<std::unique_ptr<piece::PieceReader>> pieces_;
  piece::GlobalIndexSection global_;
  std::vector<piece::Sample> samples_;
  uint32_t sample_interval_ = 64;
  uint64_t indexed_records_ = 0;

  mutable std::mutex locators_mu_;
  mutable std::shared_ptr<const std::vector<uint64_t>> locators_;
};

class TphIterator {
 public:
  TphIterator(std::shared_ptr<const Tph> tph, bool include_tombstones)
      : tph_(std::move(tph)), include_tombstones_(include_tombstones) {}

  bool Valid() const { return valid_; }
  void SeekToFirst();
  void Seek(std::string_view start);
  void Next();

  std::string_view key() const { return entry_.key; }
  std::string_view value() const { return entry_.value; }
  piece::ValueKind kind() const { return entry_.kind; }
  Status status() const { return status_; }

 private:
  bool EnsureLocators();
  Status LoadRank(uint64_t rank);
  // Settles on the first acceptable record at or after rank_.
  void Settle();

  std::shared_ptr<const Tph> tph_;
  bool include_tombstones_;
  std::shared_ptr<const std::vector<uint64_t>> locators_;
  uint64_t rank_ = 0;
  bool valid_ = false;
  Status status_;
  piece::Block block_;
  piece::EntryView entry_;
  uint64_t cached_block_id_ = ~uint64_t{0};
};

}  // namespace tphkv
