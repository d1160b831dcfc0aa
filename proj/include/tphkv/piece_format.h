#pragma once

// On-disk layout of one piece file (".ph"):
//
//   segment 0 .. segment S-1        each: blocks | block offset table | local hash fn
//   segment directory
//   [global index section]          head pieces only
//   [reverse index samples]         head pieces only
//   [reverse index locators]        head pieces only
//   footer (256 bytes, magic "TPHF")
//
// Every section carries its own CRC32C; every block carries one too.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tphkv/cphash.h"
#include "tphkv/io.h"
#include "tphkv/packed_array.h"
#include "tphkv/status.h"

namespace tphkv::piece {

constexpr uint32_t kFormatVersion = 1;
constexpr size_t kFooterSize = 256;
constexpr unsigned kPieceIndexBits = 10;
constexpr uint32_t kInvalidPiece = (1u << kPieceIndexBits) - 1;  // deleted / unoccupied
constexpr uint32_t kMaxPieces = 1u << kPieceIndexBits;
constexpr uint64_t kMaxSegmentBytes = uint64_t{1} << 32;
constexpr size_t kComparatorNameLen = 32;

enum class ValueKind : uint8_t { kValue = 0, kTombstone = 1 };

// k = max(floor(page_size / avg_kv_size), 1)
uint32_t ComputeBlockK(uint64_t page_size, uint64_t avg_kv_size);

// 8-bit digest in [1, 255] from mixing bits independent of the perfect hash
// inputs; 0 marks an empty global slot.
uint8_t SignatureOf(uint64_t key_hash);

struct SlotLocation {
  uint64_t block = 0;
  uint32_t entry = 0;
  bool operator==(const SlotLocation&) const = default;
};

inline SlotLocation ResolveSlot(uint64_t slot, uint32_t k) {
  return {slot / k, static_cast<uint32_t>(slot % k)};
}

// Packed reference from a reverse index position to one stored record:
// piece position (10 bits) | segment (14 bits) | local slot (40 bits).
struct Locator {
  uint32_t piece = 0;
  uint32_t segment = 0;
  uint64_t slot = 0;

  uint64_t Pack() const {
    return (static_cast<uint64_t>(piece) << 54) | (static_cast<uint64_t>(segment) << 40) | slot;
  }
  static Locator Unpack(uint64_t v) {
    return {static_cast<uint32_t>(v >> 54), static_cast<uint32_t>((v >> 40) & 0x3fff), v & ((uint64_t{1} << 40) - 1)};
  }
  bool operator==(const Locator&) const = default;
};
constexpr uint32_t kMaxSegments = 1u << 14;

struct Record {
  std::string key;
  ValueKind kind = ValueKind::kValue;
  std::string value;

  size_t payload_bytes() const { return key.size() + value.size(); }
};

struct EntryView {
  std::string_view key;  // empty => unoccupied slot sentinel
  ValueKind kind = ValueKind::kValue;
  std::string_view value;

  bool empty() const { return key.empty(); }
};

// Encodes one block: u16 count | u8 offset width | offsets | entries | crc32c.
// A nullptr slot encodes as the empty sentinel.
std::string EncodeBlock(std::span<const Record* const> slots);

// A decoded block owning its bytes.
class Block {
 public:
  static Result<Block> Decode(std::string bytes);

  size_t size() const { return offsets_.size(); }
  Result<EntryView> entry(size_t i) const;

 private:
  std::string bytes_;
  std::vector<uint32_t> offsets_;
};

struct SegmentMeta {
  uint64_t offset = 0;       // file offset of the segment
  uint64_t length = 0;       // whole segment
  uint64_t blocks_len = 0;   // blocks region at the segment start
  uint32_t num_blocks = 0;
  uint32_t block_k = 1;
  uint64_t key_count = 0;
  uint32_t phf_offset = 0;   // relative to segment start
  uint32_t phf_len = 0;
  uint32_t table_offset = 0; // block offset table, relative
  uint32_t table_len = 0;
};

// Resident part of one segment: local hash fn and block offsets.
struct SegmentIndex {
  SegmentMeta meta;
  cphash::PerfectHashFn local;
  std::vector<uint32_t> block_offsets;  // relative to segment start

  uint64_t BlockBegin(uint64_t b) const { return block_offsets[b]; }
  uint64_t BlockEnd(uint64_t b) const { return b + 1 < block_offsets.size() ? block_offsets[b + 1] : meta.blocks_len; }
  size_t MemoryBytes() const {
    return sizeof(SegmentIndex) - sizeof(cphash::PerfectHashFn) + local.MemoryBytes() +
           block_offsets.capacity() * sizeof(uint32_t);
  }
};

struct PieceFooter {
  static constexpr uint32_t kFlagHead = 1;
  static constexpr uint32_t kFlagReverseIndex = 2;

  uint32_t format_version = kFormatVersion;
  uint64_t tph_id = 0;
  uint64_t piece_seq = 0;
  uint32_t level = 0;
  uint32_t segment_count = 0;
  uint64_t segdir_offset = 0, segdir_len = 0;
  uint64_t global_offset = 0, global_len = 0;
  uint64_t samples_offset = 0, samples_len = 0;
  uint64_t locators_offset = 0, locators_len = 0;
  uint64_t search_lo = 0, search_hi = 0;  // [lo, hi)
  std::string comparator = "bytewise";
  uint32_t flags = 0;
  uint32_t block_k = 1;
  uint64_t key_count = 0;
  uint64_t tombstone_count = 0;
  uint64_t raw_kv_bytes = 0;
  uint64_t hash_seed = 0;

  bool is_head() const { return flags & kFlagHead; }
  bool has_reverse_index() const { return flags & kFlagReverseIndex; }

  std::string Encode() const;
  static Result<PieceFooter> Decode(std::string_view bytes);
  bool operator==(const PieceFooter&) const = default;
};

// TPH-wide index stored in the head piece.
struct GlobalIndexSection {
  std::vector<uint64_t> piece_seqs;  // piece position -> piece sequence number
  cphash::PerfectHashFn fn;
  std::vector<uint8_t> signatures;   // one per global slot
  PackedArray piece_index;           // kPieceIndexBits per global slot

  uint64_t table_size() const { return signatures.size(); }
  void AppendTo(std::string* dst) const;
  static Result<GlobalIndexSection> Decode(std::string_view bytes);
  size_t MemoryBytes() const;
};

struct Sample {
  std::string key;
  uint64_t rank = 0;
  bool operator==(const Sample&) const = default;
};

struct ReverseIndexSection {
  std::vector<uint64_t> locators;  // packed Locator, comparator order
  uint32_t interval = 64;
  std::vector<Sample> samples;

  void AppendSamplesTo(std::string* dst) const;
  void AppendLocatorsTo(std::string* dst) const;
  static Result<std::vector<Sample>> DecodeSamples(std::string_view bytes, uint32_t* interval, uint64_t* count);
  static Result<std::vector<uint64_t>> DecodeLocators(std::string_view bytes);
};

// One segment ready to be written: its local function plus the record placed
// at every local slot (nullptr for an empty slot).
struct SegmentInput {
  cphash::PerfectHashFn local;
  std::vector<const Record*> slots;
};

// Builds the local function over `records` (hashes given in the same order)
// and places each record at its slot.
Result<SegmentInput> PlaceSegment(std::span<const Record* const> records, std::span<const uint64_t> key_hashes,
                                  uint64_t seed, const cphash::CpHashConfig& config);

struct HeadSections {
  const GlobalIndexSection* global = nullptr;
  const ReverseIndexSection* reverse = nullptr;
};

struct PieceWriteResult {
  PieceFooter footer;
  uint64_t file_bytes = 0;
  uint64_t segment_bytes = 0;  // blocks + offset tables + local fns
  uint64_t index_bytes = 0;    // directory + head sections + footer
};

// Writes a complete piece. `footer_fields` supplies identity, range and seed;
// layout offsets, flags and stats are filled in.
// Fails with SegmentOverflow when a segment reaches `max_segment_bytes`.
Result<PieceWriteResult> WritePiece(WritableFile* file, std::span<const SegmentInput> segments, uint32_t block_k,
                                    const HeadSections& head, PieceFooter footer_fields,
                                    uint64_t max_segment_bytes = kMaxSegmentBytes - 1);

// Read side of one piece. Resident state is the footer plus each segment's
// SegmentIndex; head sections are read on demand.
class PieceReader {
 public:
  static Result<std::unique_ptr<PieceReader>> Open(const std::string& path, bool direct_io,
                                                   std::shared_ptr<IoStats> stats);

  const PieceFooter& footer() const { return footer_; }
  const std::vector<SegmentIndex>& segments() const { return segments_; }
  uint64_t file_size() const { return file_->size(); }
  const RandomAccessFile& file() const { return *file_; }

  // Exactly one positioned read of the block's byte range.
  Result<Block> ReadBlock(uint32_t segment, uint64_t block_index, IoPurpose purpose) const;

  // Reads the block holding `slot` and returns its entry there.
  Status ReadSlot(uint32_t segment, uint64_t slot, IoPurpose purpose, Block* block, EntryView* entry) const;

  // Visits every occupied slot of every segment, reading each segment's
  // blocks region in one pass.
  template <typename Fn>
  Status ForEachRecord(IoPurpose purpose, Fn&& fn) const;

  Result<GlobalIndexSection> ReadGlobalIndex() const;
  Result<std::vector<Sample>> ReadSamples(uint32_t* interval, uint64_t* count) const;
  Result<std::vector<uint64_t>> ReadLocators() const;

  size_t ResidentBytes() const;

 private:
  PieceReader() = default;
  Status ReadSegmentBlocks(uint32_t segment, IoPurpose purpose, std::string* out) const;

  std::unique_ptr<RandomAccessFile> file_;
  PieceFooter footer_;
  std::vector<SegmentIndex> segments_;
};

template <typename Fn>
Status PieceReader::ForEachRecord(IoPurpose purpose, Fn&& fn) const {
  std::string region;
  for (uint32_t s = 0; s < segments_.size(); ++s) {
    const SegmentIndex& seg = segments_[s];
    if (seg.meta.num_blocks == 0) continue;
    TPHKV_RETURN_IF_ERROR(ReadSegmentBlocks(s, purpose, &region));
    for (uint64_t b = 0; b < seg.meta.num_blocks; ++b) {
      std::string bytes = region.substr(seg.BlockBegin(b), seg.BlockEnd(b) - seg.BlockBegin(b));
      TPHKV_ASSIGN_OR_RETURN(Block block, Block::Decode(std::move(bytes)));
      for (size_t i = 0; i < block.size(); ++i) {
        TPHKV_ASSIGN_OR_RETURN(EntryView e, block.entry(i));
        if (e.empty()) continue;
        uint64_t slot = b * seg.meta.block_k + i;
        TPHKV_RETURN_IF_ERROR(fn(s, slot, e));
      }
    }
  }
  return Status::OK();
}

}  // namespace tphkv::piece
