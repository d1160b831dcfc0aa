#pragma once

// Merging delta records into a base TPH, hash-range partitioning and
// garbage collection of piece files.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tphkv/cphash.h"
#include "tphkv/io.h"
#include "tphkv/piece_format.h"
#include "tphkv/status.h"
#include "tphkv/tph.h"

namespace tphkv {

inline uint32_t SearchKeyOf(std::string_view key, uint64_t hash_seed) {
  return DigestKey(key, hash_seed).search_key();
}

// Level L holds fanout^L TPHs; TPH i covers [floor(i*2^32/W), floor((i+1)*2^32/W)).
class HashRangeLayout {
 public:
  static constexpr uint64_t kSpace = uint64_t{1} << 32;

  explicit HashRangeLayout(uint32_t fanout) : fanout_(fanout < 1 ? 1 : fanout) {}

  uint32_t fanout() const { return fanout_; }
  uint64_t Width(uint32_t level) const;
  uint64_t Lo(uint32_t level, uint64_t i) const;
  std::pair<uint64_t, uint64_t> Range(uint32_t level, uint64_t i) const { return {Lo(level, i), Lo(level, i + 1)}; }
  uint64_t IndexOf(uint32_t level, uint32_t search_key) const;
  // Children of (level, i) at level + 1: [first, first + fanout).
  uint64_t FirstChild(uint64_t i) const { return i * fanout_; }

 private:
  uint32_t fanout_;
};

// A batch of delta records bound for one child TPH.
struct MergeTask {
  uint32_t level = 0;
  uint64_t index = 0;
  uint64_t search_lo = 0;
  uint64_t search_hi = 0;
  std::vector<piece::Record> delta;  // sorted by key
};

// Splits `records` (sorted, unique keys) among the children of
// (source_level, source_index). Empty partitions are skipped.
std::vector<MergeTask> PlanChildTasks(const HashRangeLayout& layout, uint32_t source_level, uint64_t source_index,
                                      std::vector<piece::Record> records, uint64_t hash_seed);

struct MergeOptions {
  std::string tph_dir;
  uint64_t tph_id = 0;
  uint32_t level = 0;
  uint32_t index = 0;
  uint64_t search_lo = 0;
  uint64_t search_hi = uint64_t{1} << 32;
  uint64_t new_piece_seq = 0;
  uint64_t hash_seed = 0;
  uint32_t segment_count = 64;
  uint64_t page_size = 4096;
  uint32_t sample_interval = 64;
  uint32_t max_pieces = 16;
  double invalid_ratio_threshold = 0.5;
  // No data deeper in the read path overlaps this TPH's range.
  bool bottom = false;
  bool direct_io = false;
  std::shared_ptr<IoStats> stats;
  cphash::CpHashConfig cphash;
};

struct MergeStats {
  uint64_t delta_records = 0;
  uint64_t delta_bytes = 0;
  uint32_t gc_marked_pieces = 0;
  uint64_t rewritten_records = 0;
  uint64_t rewritten_bytes = 0;
  uint64_t records_written = 0;
  uint64_t kv_bytes_written = 0;  // key + value bytes in the new piece
  uint64_t piece_bytes = 0;
  uint64_t segment_bytes = 0;
  uint64_t index_bytes = 0;
  uint64_t base_bytes_read = 0;
  uint64_t dropped_tombstones = 0;
};

struct MergeResult {
  TphMeta meta;                           // TPH after the merge
  std::vector<uint64_t> obsolete_pieces;  // piece seqs to delete once committed
  MergeStats stats;
};

// Per piece position: number of global slots pointing at it.
std::vector<uint64_t> LiveCountsPerPiece(const Tph& tph);

// Piece positions to fold into the next merge: pieces whose stale share
// exceeds the threshold, then oldest pieces until survivors + the new head
// fit within min(max_pieces, 1023).
std::vector<bool> SelectGcPieces(const Tph& tph, uint32_t max_pieces, double invalid_ratio_threshold);

// Writes one new head piece holding the delta plus GC-rewritten records and
// a fresh global index; untouched base records stay in their pieces.
// `delta` must be sorted by key with unique keys; it is newer than `base`.
// `base` may be null for a TPH with no pieces.
Result<MergeResult> MergeIntoTph(const Tph* base, std::span<const piece::Record> delta, const MergeOptions& opts);

// Current state of every key in a TPH, tombstones included, sorted by key.
// Reads every piece in full.
Result<std::vector<piece::Record>> ReadCurrentRecords(const Tph& tph, IoPurpose purpose);

// Sorts (key, locator) pairs by key and samples every interval-th rank.
piece::ReverseIndexSection BuildReverseIndex(std::vector<std::pair<std::string_view, uint64_t>> entries,
                                             uint32_t interval);

}  // namespace tphkv
