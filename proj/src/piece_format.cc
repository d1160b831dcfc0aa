#include "tphkv/piece_format.h"

#include <algorithm>
#include <cstring>

#include "tphkv/coding.h"
#include "tphkv/crc32c.h"
#include "tphkv/hash.h"

namespace tphkv::piece {
namespace {

constexpr char kFooterMagic[4] = {'T', 'P', 'H', 'F'};
constexpr size_t kFooterCrcOffset = kFooterSize - 4;

void AppendCrc(std::string* dst, size_t start) {
  PutFixed32(dst, crc32c::Value(dst->data() + start, dst->size() - start));
}

// Splits off and verifies the trailing CRC32C of a section.
Result<std::string_view> CheckedBody(std::string_view bytes, const char* what) {
  if (bytes.size() < 4) return Status::Truncated(std::string(what) + " too short");
  std::string_view body = bytes.substr(0, bytes.size() - 4);
  if (crc32c::Value(body) != DecodeFixed32(bytes.data() + body.size())) {
    return Status::ChecksumMismatch(std::string(what) + " checksum");
  }
  return body;
}

void EncodeEntry(std::string* dst, const Record* r) {
  if (r == nullptr) {
    dst->push_back(0);
    return;
  }
  PutLengthPrefixed(dst, r->key);
  dst->push_back(static_cast<char>(r->kind));
  PutLengthPrefixed(dst, r->kind == ValueKind::kTombstone ? std::string_view() : std::string_view(r->value));
}

}  // namespace

uint32_t ComputeBlockK(uint64_t page_size, uint64_t avg_kv_size) {
  if (avg_kv_size == 0) avg_kv_size = 1;
  uint64_t k = page_size / avg_kv_size;
  if (k < 1) k = 1;
  if (k > 0xffff) k = 0xffff;
  return static_cast<uint32_t>(k);
}

uint8_t SignatureOf(uint64_t key_hash) {
  uint64_t h = Fmix64(key_hash ^ 0x2545f4914f6cdd1dULL);
  return static_cast<uint8_t>(h % 255 + 1);
}

std::string EncodeBlock(std::span<const Record* const> slots) {
  std::string entries;
  std::vector<uint32_t> rel;
  rel.reserve(slots.size());
  for (const Record* r : slots) {
    rel.push_back(static_cast<uint32_t>(entries.size()));
    EncodeEntry(&entries, r);
  }
  const size_t count = slots.size();
  uint8_t width = 2;
  if (3 + 2 * count + entries.size() > 0xffff) width = 4;
  const size_t header = 3 + width * count;

  std::string out;
  out.reserve(header + entries.size() + 4);
  PutFixed16(&out, static_cast<uint16_t>(count));
  out.push_back(static_cast<char>(width));
  for (uint32_t r : rel) {
    uint32_t off = static_cast<uint32_t>(header + r);
    if (width == 2) {
      PutFixed16(&out, static_cast<uint16_t>(off));
    } else {
      PutFixed32(&out, off);
    }
  }
  out += entries;
  AppendCrc(&out, 0);
  return out;
}

Result<Block> Block::Decode(std::string bytes) {
  TPHKV_ASSIGN_OR_RETURN(std::string_view body, CheckedBody(bytes, "block"));
  Decoder dec(body);
  uint16_t count = dec.U16();
  uint8_t width = dec.U8();
  if (!dec.ok() || (width != 2 && width != 4)) return Status(Code::kChecksumMismatch, "malformed block header");
  Block b;
  b.offsets_.resize(count);
  for (auto& off : b.offsets_) off = width == 2 ? dec.U16() : dec.U32();
  if (!dec.ok()) return Status::Truncated("block offset table");
  for (uint32_t off : b.offsets_) {
    if (off >= body.size()) return Status(Code::kCorruptIndex, "block entry offset out of range");
  }
  b.bytes_ = std::move(bytes);
  b.bytes_.resize(body.size());
  return b;
}

Result<EntryView> Block::entry(size_t i) const {
  Decoder dec(std::string_view(bytes_).substr(offsets_[i]));
  EntryView e;
  e.key = dec.LengthPrefixed();
  if (!dec.ok()) return Status::Truncated("block entry key");
  if (e.key.empty()) return e;
  uint8_t kind = dec.U8();
  e.value = dec.LengthPrefixed();
  if (!dec.ok() || kind > 1) return Status(Code::kCorruptIndex, "block entry body");
  e.kind = static_cast<ValueKind>(kind);
  return e;
}

std::string PieceFooter::Encode() const {
  std::string out;
  out.reserve(kFooterSize);
  out.append(kFooterMagic, 4);
  PutFixed32(&out, format_version);
  PutFixed64(&out, tph_id);
  PutFixed64(&out, piece_seq);
  PutFixed32(&out, level);
  PutFixed32(&out, segment_count);
  PutFixed64(&out, segdir_offset);
  PutFixed64(&out, segdir_len);
  PutFixed64(&out, global_offset);
  PutFixed64(&out, global_len);
  PutFixed64(&out, samples_offset);
  PutFixed64(&out, samples_len);
  PutFixed64(&out, locators_offset);
  PutFixed64(&out, locators_len);
  PutFixed64(&out, search_lo);
  PutFixed64(&out, search_hi);
  std::string name = comparator.substr(0, kComparatorNameLen);
  name.resize(kComparatorNameLen, '\0');
  out += name;
  PutFixed32(&out, flags);
  PutFixed32(&out, block_k);
  PutFixed64(&out, key_count);
  PutFixed64(&out, tombstone_count);
  PutFixed64(&out, raw_kv_bytes);
  PutFixed64(&out, hash_seed);
  out.resize(kFooterCrcOffset, '\0');
  AppendCrc(&out, 0);
  return out;
}

Result<PieceFooter> PieceFooter::Decode(std::string_view bytes) {
  if (bytes.size() != kFooterSize) return Status::Truncated("footer size");
  if (bytes.substr(0, 4) != std::string_view(kFooterMagic, 4)) return Status(Code::kVersionMismatch, "bad footer magic");
  TPHKV_ASSIGN_OR_RETURN(std::string_view body, CheckedBody(bytes, "footer"));
  Decoder dec(body.substr(4));
  PieceFooter f;
  f.format_version = dec.U32();
  if (f.format_version != kFormatVersion) return Status(Code::kVersionMismatch, "unsupported piece format version");
  f.tph_id = dec.U64();
  f.piece_seq = dec.U64();
  f.level = dec.U32();
  f.segment_count = dec.U32();
  f.segdir_offset = dec.U64();
  f.segdir_len = dec.U64();
  f.global_offset = dec.U64();
  f.global_len = dec.U64();
  f.samples_offset = dec.U64();
  f.samples_len = dec.U64();
  f.locators_offset = dec.U64();
  f.locators_len = dec.U64();
  f.search_lo = dec.U64();
  f.search_hi = dec.U64();
  std::string_view name = dec.Bytes(kComparatorNameLen);
  f.comparator = std::string(name.substr(0, std::min(name.find('\0'), name.size())));
  f.flags = dec.U32();
  f.block_k = dec.U32();
  f.key_count = dec.U64();
  f.tombstone_count = dec.U64();
  f.raw_kv_bytes = dec.U64();
  f.hash_seed = dec.U64();
  if (!dec.ok()) return Status::Truncated("footer fields");
  return f;
}

void GlobalIndexSection::AppendTo(std::string* dst) const {
  const size_t start = dst->size();
  PutFixed32(dst, static_cast<uint32_t>(piece_seqs.size()));
  for (uint64_t s : piece_seqs) PutFixed64(dst, s);
  std::string fn_bytes = fn.Serialize();
  PutFixed32(dst, static_cast<uint32_t>(fn_bytes.size()));
  *dst += fn_bytes;
  PutFixed64(dst, signatures.size());
  dst->append(reinterpret_cast<const char*>(signatures.data()), signatures.size());
  piece_index.AppendPayload(dst);
  AppendCrc(dst, start);
}

Result<GlobalIndexSection> GlobalIndexSection::Decode(std::string_view bytes) {
  TPHKV_ASSIGN_OR_RETURN(std::string_view body, CheckedBody(bytes, "global index"));
  Decoder dec(body);
  GlobalIndexSection g;
  uint32_t pieces = dec.U32();
  if (!dec.ok() || pieces > kMaxPieces) return Status(Code::kCorruptIndex, "global index piece count");
  g.piece_seqs.resize(pieces);
  for (auto& s : g.piece_seqs) s = dec.U64();
  uint32_t fn_len = dec.U32();
  std::string_view fn_bytes = dec.Bytes(fn_len);
  if (!dec.ok()) return Status::Truncated("global index header");
  TPHKV_ASSIGN_OR_RETURN(g.fn, cphash::PerfectHashFn::Deserialize(fn_bytes));
  uint64_t table = dec.U64();
  if (!dec.ok() || table != g.fn.table_size()) return Status(Code::kCorruptIndex, "global table size mismatch");
  std::string_view sigs = dec.Bytes(table);
  if (!dec.ok()) return Status::Truncated("signature table");
  g.signatures.assign(sigs.begin(), sigs.end());
  size_t payload = (table * kPieceIndexBits + 7) / 8;
  std::string_view idx = dec.Bytes(payload);
  if (!dec.ok() || dec.remaining() != 0) return Status(Code::kCorruptIndex, "piece index table size");
  g.piece_index = PackedArray::FromPayload(table, kPieceIndexBits, idx);
  return g;
}

size_t GlobalIndexSection::MemoryBytes() const {
  return sizeof(GlobalIndexSection) - sizeof(cphash::PerfectHashFn) + fn.MemoryBytes() +
         piece_seqs.capacity() * sizeof(uint64_t) + signatures.capacity() + piece_index.MemoryBytes();
}

void ReverseIndexSection::AppendSamplesTo(std::string* dst) const {
  const size_t start = dst->size();
  PutFixed32(dst, interval);
  PutFixed64(dst, locators.size());
  PutFixed32(dst, static_cast<uint32_t>(samples.size()));
  for (const Sample& s : samples) {
    PutLengthPrefixed(dst, s.key);
    PutFixed64(dst, s.rank);
  }
  AppendCrc(dst, start);
}

void ReverseIndexSection::AppendLocatorsTo(std::string* dst) const {
  const size_t start = dst->size();
  PutFixed64(dst, locators.size());
  for (uint64_t l : locators) PutFixed64(dst, l);
  AppendCrc(dst, start);
}

Result<std::vector<Sample>> ReverseIndexSection::DecodeSamples(std::string_view bytes, uint32_t* interval,
                                                               uint64_t* count) {
  TPHKV_ASSIGN_OR_RETURN(std::string_view body, CheckedBody(bytes, "reverse index samples"));
  Decoder dec(body);
  *interval = dec.U32();
  *count = dec.U64();
  uint32_t n = dec.U32();
  if (!dec.ok() || *interval == 0) return Status(Code::kCorruptIndex, "sample header");
  std::vector<Sample> samples;
  samples.reserve(std::min<size_t>(n, dec.remaining()));
  for (uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.key = std::string(dec.LengthPrefixed());
    s.rank = dec.U64();
    if (!dec.ok()) return Status::Truncated("sample entry");
    samples.push_back(std::move(s));
  }
  if (dec.remaining() != 0) return Status(Code::kCorruptIndex, "trailing sample bytes");
  return samples;
}

Result<std::vector<uint64_t>> ReverseIndexSection::DecodeLocators(std::string_view bytes) {
  TPHKV_ASSIGN_OR_RETURN(std::string_view body, CheckedBody(bytes, "reverse index locators"));
  Decoder dec(body);
  uint64_t n = dec.U64();
  if (!dec.ok() || n != dec.remaining() / 8 || dec.remaining() % 8 != 0) {
    return Status(Code::kCorruptIndex, "locator count");
  }
  std::vector<uint64_t> out(n);
  for (auto& l : out) l = dec.U64();
  return out;
}

Result<SegmentInput> PlaceSegment(std::span<const Record* const> records, std::span<const uint64_t> key_hashes,
                                  uint64_t seed, const cphash::CpHashConfig& config) {
  SegmentInput seg;
  TPHKV_ASSIGN_OR_RETURN(seg.local, cphash::PerfectHashFn::Build(key_hashes, seed, config));
  seg.slots.assign(seg.local.table_size(), nullptr);
  for (size_t i = 0; i < records.size(); ++i) seg.slots[seg.local.Evaluate(key_hashes[i])] = records[i];
  return seg;
}

Result<PieceWriteResult> WritePiece(WritableFile* file, std::span<const SegmentInput> segments, uint32_t block_k,
                                    const HeadSections& head, PieceFooter footer, uint64_t max_segment_bytes) {
  if (block_k == 0) return Status::InvalidArgument("block_k must be positive");
  if (segments.size() > kMaxSegments) return Status::InvalidArgument("too many segments");
  PieceWriteResult result;
  std::vector<SegmentMeta> metas;
  metas.reserve(segments.size());
  uint64_t offset = 0;
  footer.key_count = 0;
  footer.tombstone_count = 0;
  footer.raw_kv_bytes = 0;

  std::string buf;
  for (const SegmentInput& seg : segments) {
    SegmentMeta meta;
    meta.offset = offset;
    meta.block_k = block_k;
    const uint64_t slots = seg.slots.size();
    meta.num_blocks = static_cast<uint32_t>((slots + block_k - 1) / block_k);
    std::vector<uint32_t> block_offsets;
    block_offsets.reserve(meta.num_blocks);
    uint64_t seg_len = 0;
    for (uint64_t b = 0; b < meta.num_blocks; ++b) {
      uint64_t first = b * block_k;
      uint64_t n = std::min<uint64_t>(block_k, slots - first);
      std::span<const Record* const> block_slots(seg.slots.data() + first, n);
      for (const Record* r : block_slots) {
        if (r == nullptr) continue;
        ++meta.key_count;
        if (r->kind == ValueKind::kTombstone) ++footer.tombstone_count;
        footer.raw_kv_bytes += r->payload_bytes();
      }
      buf = EncodeBlock(block_slots);
      if (seg_len + buf.size() >= max_segment_bytes) {
        return Status(Code::kSegmentOverflow, "segment exceeds 32-bit offset range");
      }
      block_offsets.push_back(static_cast<uint32_t>(seg_len));
      seg_len += buf.size();
      TPHKV_RETURN_IF_ERROR(file->Append(buf));
    }
    meta.blocks_len = seg_len;

    buf.clear();
    for (uint32_t off : block_offsets) PutFixed32(&buf, off);
    AppendCrc(&buf, 0);
    meta.table_offset = static_cast<uint32_t>(seg_len);
    meta.table_len = static_cast<uint32_t>(buf.size());
    seg_len += buf.size();
    TPHKV_RETURN_IF_ERROR(file->Append(buf));

    buf = seg.local.Serialize();
    if (seg_len + buf.size() >= max_segment_bytes) {
      return Status(Code::kSegmentOverflow, "segment exceeds 32-bit offset range");
    }
    meta.phf_offset = static_cast<uint32_t>(seg_len);
    meta.phf_len = static_cast<uint32_t>(buf.size());
    seg_len += buf.size();
    TPHKV_RETURN_IF_ERROR(file->Append(buf));

    meta.length = seg_len;
    footer.key_count += meta.key_count;
    offset += seg_len;
    metas.push_back(meta);
  }
  result.segment_bytes = offset;

  // Segment directory.
  buf.clear();
  PutFixed32(&buf, static_cast<uint32_t>(metas.size()));
  for (const SegmentMeta& m : metas) {
    PutFixed64(&buf, m.offset);
    PutFixed64(&buf, m.length);
    PutFixed64(&buf, m.blocks_len);
    PutFixed32(&buf, m.num_blocks);
    PutFixed32(&buf, m.block_k);
    PutFixed64(&buf, m.key_count);
    PutFixed32(&buf, m.table_offset);
    PutFixed32(&buf, m.table_len);
    PutFixed32(&buf, m.phf_offset);
    PutFixed32(&buf, m.phf_len);
  }
  AppendCrc(&buf, 0);
  footer.segment_count = static_cast<uint32_t>(metas.size());
  footer.segdir_offset = offset;
  footer.segdir_len = buf.size();
  offset += buf.size();
  TPHKV_RETURN_IF_ERROR(file->Append(buf));

  footer.flags = 0;
  footer.global_offset = footer.global_len = 0;
  footer.samples_offset = footer.samples_len = 0;
  footer.locators_offset = footer.locators_len = 0;
  if (head.global != nullptr) {
    buf.clear();
    head.global->AppendTo(&buf);
    footer.flags |= PieceFooter::kFlagHead;
    footer.global_offset = offset;
    footer.global_len = buf.size();
    offset += buf.size();
    TPHKV_RETURN_IF_ERROR(file->Append(buf));
  }
  if (head.reverse != nullptr) {
    buf.clear();
    head.reverse->AppendSamplesTo(&buf);
    footer.flags |= PieceFooter::kFlagReverseIndex;
    footer.samples_offset = offset;
    footer.samples_len = buf.size();
    offset += buf.size();
    TPHKV_RETURN_IF_ERROR(file->Append(buf));
    buf.clear();
    head.reverse->AppendLocatorsTo(&buf);
    footer.locators_offset = offset;
    footer.locators_len = buf.size();
    offset += buf.size();
    TPHKV_RETURN_IF_ERROR(file->Append(buf));
  }
  footer.block_k = block_k;
  footer.format_version = kFormatVersion;
  TPHKV_RETURN_IF_ERROR(file->Append(footer.Encode()));
  offset += kFooterSize;

  result.footer = footer;
  result.file_bytes = offset;
  result.index_bytes = offset - result.segment_bytes;
  return result;
}

Result<std::unique_ptr<PieceReader>> PieceReader::Open(const std::string& path, bool direct_io,
                                                       std::shared_ptr<IoStats> stats) {
  std::unique_ptr<PieceReader> r(new PieceReader);
  TPHKV_ASSIGN_OR_RETURN(r->file_, RandomAccessFile::Open(path, direct_io, std::move(stats)));
  const uint64_t size = r->file_->size();
  if (size < kFooterSize) return Status::Truncated("piece smaller than footer: " + path);
  std::string buf;
  TPHKV_RETURN_IF_ERROR(r->file_->Read(size - kFooterSize, kFooterSize, &buf, IoPurpose::kLoad));
  TPHKV_ASSIGN_OR_RETURN(r->footer_, PieceFooter::Decode(buf));
  const PieceFooter& f = r->footer_;
  if (f.segdir_offset + f.segdir_len > size - kFooterSize) return Status::Truncated("segment directory range");

  TPHKV_RETURN_IF_ERROR(r->file_->Read(f.segdir_offset, f.segdir_len, &buf, IoPurpose::kLoad));
  TPHKV_ASSIGN_OR_RETURN(std::string_view dir, CheckedBody(buf, "segment directory"));
  Decoder dec(dir);
  uint32_t count = dec.U32();
  if (!dec.ok() || count != f.segment_count) return Status(Code::kCorruptIndex, "segment count mismatch");
  r->segments_.resize(count);
  uint64_t prev_end = 0;
  for (auto& seg : r->segments_) {
    SegmentMeta& m = seg.meta;
    m.offset = dec.U64();
    m.length = dec.U64();
    m.blocks_len = dec.U64();
    m.num_blocks = dec.U32();
    m.block_k = dec.U32();
    m.key_count = dec.U64();
    m.table_offset = dec.U32();
    m.table_len = dec.U32();
    m.phf_offset = dec.U32();
    m.phf_len = dec.U32();
    if (!dec.ok()) return Status::Truncated("segment directory entry");
    if (m.offset < prev_end || m.offset + m.length > f.segdir_offset || m.block_k == 0 ||
        m.table_offset + static_cast<uint64_t>(m.table_len) > m.length ||
        m.phf_offset + static_cast<uint64_t>(m.phf_len) > m.length) {
      return Status(Code::kCorruptIndex, "segment directory entry out of range");
    }
    prev_end = m.offset + m.length;
  }

  // Resident per-segment state: offset table and local fn in one read each.
  for (auto& seg : r->segments_) {
    const SegmentMeta& m = seg.meta;
    TPHKV_RETURN_IF_ERROR(r->file_->Read(m.offset + m.table_offset, m.table_len + m.phf_len, &buf, IoPurpose::kLoad));
    TPHKV_ASSIGN_OR_RETURN(std::string_view table, CheckedBody(std::string_view(buf).substr(0, m.table_len),
                                                               "block offset table"));
    if (table.size() != 4ull * m.num_blocks) return Status(Code::kCorruptIndex, "block offset table size");
    seg.block_offsets.resize(m.num_blocks);
    for (uint32_t b = 0; b < m.num_blocks; ++b) {
      seg.block_offsets[b] = DecodeFixed32(table.data() + 4 * b);
      if ((b > 0 && seg.block_offsets[b] <= seg.block_offsets[b - 1]) || seg.block_offsets[b] >= m.blocks_len) {
        return Status(Code::kCorruptIndex, "block offsets not increasing");
      }
    }
    TPHKV_ASSIGN_OR_RETURN(seg.local, cphash::PerfectHashFn::Deserialize(std::string_view(buf).substr(m.table_len)));
    if (seg.local.table_size() > uint64_t{m.num_blocks} * m.block_k) {
      return Status(Code::kCorruptIndex, "local table larger than block capacity");
    }
  }
  return r;
}

Result<Block> PieceReader::ReadBlock(uint32_t segment, uint64_t block_index, IoPurpose purpose) const {
  if (segment >= segments_.size()) return Status(Code::kCorruptIndex, "segment out of range");
  const SegmentIndex& seg = segments_[segment];
  if (block_index >= seg.block_offsets.size()) return Status(Code::kCorruptIndex, "block out of range");
  uint64_t begin = seg.BlockBegin(block_index);
  uint64_t end = seg.BlockEnd(block_index);
  std::string bytes;
  TPHKV_RETURN_IF_ERROR(file_->Read(seg.meta.offset + begin, end - begin, &bytes, purpose));
  return Block::Decode(std::move(bytes));
}

Status PieceReader::ReadSlot(uint32_t segment, uint64_t slot, IoPurpose purpose, Block* block,
                             EntryView* entry) const {
  if (segment >= segments_.size()) return Status(Code::kCorruptIndex, "segment out of range");
  const SegmentIndex& seg = segments_[segment];
  SlotLocation loc = ResolveSlot(slot, seg.meta.block_k);
  TPHKV_ASSIGN_OR_RETURN(*block, ReadBlock(segment, loc.block, purpose));
  if (loc.entry >= block->size()) return Status(Code::kCorruptIndex, "slot beyond block entries");
  TPHKV_ASSIGN_OR_RETURN(*entry, block->entry(loc.entry));
  return Status::OK();
}

Status PieceReader::ReadSegmentBlocks(uint32_t segment, IoPurpose purpose, std::string* out) const {
  const SegmentIndex& seg = segments_[segment];
  return file_->Read(seg.meta.offset, seg.meta.blocks_len, out, purpose);
}

Result<GlobalIndexSection> PieceReader::ReadGlobalIndex() const {
  if (!footer_.is_head()) return Status(Code::kCorruptIndex, "piece has no global index");
  std::string buf;
  TPHKV_RETURN_IF_ERROR(file_->Read(footer_.global_offset, footer_.global_len, &buf, IoPurpose::kLoad));
  return GlobalIndexSection::Decode(buf);
}

Result<std::vector<Sample>> PieceReader::ReadSamples(uint32_t* interval, uint64_t* count) const {
  if (!footer_.has_reverse_index()) return Status(Code::kNoReverseIndex, "piece has no reverse index");
  std::string buf;
  TPHKV_RETURN_IF_ERROR(file_->Read(footer_.samples_offset, footer_.samples_len, &buf, IoPurpose::kLoad));
  return ReverseIndexSection::DecodeSamples(buf, interval, count);
}

Result<std::vector<uint64_t>> PieceReader::ReadLocators() const {
  if (!footer_.has_reverse_index()) return Status(Code::kNoReverseIndex, "piece has no reverse index");
  std::string buf;
  TPHKV_RETURN_IF_ERROR(file_->Read(footer_.locators_offset, footer_.locators_len, &buf, IoPurpose::kUser));
  return ReverseIndexSection::DecodeLocators(buf);
}

size_t PieceReader::ResidentBytes() const {
  size_t total = sizeof(PieceReader) + sizeof(PieceFooter);
  for (const auto& s : segments_) total += s.MemoryBytes();
  return total;
}

}  // namespace tphkv::piece
