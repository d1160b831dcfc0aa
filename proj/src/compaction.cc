#include "tphkv/compaction.h"

#include <algorithm>
#include <filesystem>

namespace tphkv {

using piece::kInvalidPiece;
using piece::Locator;
using piece::Record;
using piece::ValueKind;

uint64_t HashRangeLayout::Width(uint32_t level) const {
  uint64_t w = 1;
  for (uint32_t l = 0; l < level && w < kSpace; ++l) w *= fanout_;
  return std::min(w, kSpace);
}

uint64_t HashRangeLayout::Lo(uint32_t level, uint64_t i) const {
  return static_cast<uint64_t>((static_cast<unsigned __int128>(i) << 32) / Width(level));
}

uint64_t HashRangeLayout::IndexOf(uint32_t level, uint32_t search_key) const {
  unsigned __int128 num = static_cast<unsigned __int128>(uint64_t{search_key} + 1) * Width(level);
  return static_cast<uint64_t>((num + kSpace - 1) >> 32) - 1;
}

std::vector<MergeTask> PlanChildTasks(const HashRangeLayout& layout, uint32_t source_level, uint64_t source_index,
                                      std::vector<Record> records, uint64_t hash_seed) {
  const uint32_t child_level = source_level + 1;
  const uint64_t first = layout.FirstChild(source_index);
  std::vector<MergeTask> tasks(layout.fanout());
  for (uint32_t c = 0; c < layout.fanout(); ++c) {
    tasks[c].level = child_level;
    tasks[c].index = first + c;
    std::tie(tasks[c].search_lo, tasks[c].search_hi) = layout.Range(child_level, first + c);
  }
  for (Record& r : records) {
    uint64_t child = layout.IndexOf(child_level, SearchKeyOf(r.key, hash_seed));
    uint64_t c = child < first ? 0 : std::min<uint64_t>(child - first, layout.fanout() - 1);
    tasks[c].delta.push_back(std::move(r));
  }
  std::erase_if(tasks, [](const MergeTask& t) { return t.delta.empty(); });
  return tasks;
}

piece::ReverseIndexSection BuildReverseIndex(std::vector<std::pair<std::string_view, uint64_t>> entries,
                                             uint32_t interval) {
  if (!std::is_sorted(entries.begin(), entries.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; })) {
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  piece::ReverseIndexSection rev;
  rev.interval = interval;
  rev.locators.reserve(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    rev.locators.push_back(entries[i].second);
    if (i % interval == 0) rev.samples.push_back({std::string(entries[i].first), i});
  }
  return rev;
}

std::vector<uint64_t> LiveCountsPerPiece(const Tph& tph) {
  std::vector<uint64_t> live(tph.pieces().size(), 0);
  const auto& g = tph.global();
  for (uint64_t i = 0; i < g.table_size(); ++i) {
    if (g.signatures[i] == 0) continue;
    uint32_t p = g.piece_index.Get(i);
    if (p < live.size()) ++live[p];
  }
  return live;
}

std::vector<bool> SelectGcPieces(const Tph& tph, uint32_t max_pieces, double invalid_ratio_threshold) {
  const size_t n = tph.pieces().size();
  std::vector<bool> marked(n, false);
  const uint32_t limit = std::min<uint32_t>(std::max<uint32_t>(max_pieces, 1), piece::kInvalidPiece);
  std::vector<uint64_t> live = LiveCountsPerPiece(tph);
  size_t survivors = 0;
  for (size_t p = 0; p < n; ++p) {
    if (live[p] == 0) continue;  // released without rewriting
    uint64_t total = tph.pieces()[p]->footer().key_count;
    double invalid = total == 0 ? 0.0 : 1.0 - static_cast<double>(live[p]) / static_cast<double>(total);
    if (invalid > invalid_ratio_threshold) {
      marked[p] = true;
    } else {
      ++survivors;
    }
  }
  for (size_t p = 0; p < n && survivors + 1 > limit; ++p) {
    if (marked[p] || live[p] == 0) continue;
    marked[p] = true;
    --survivors;
  }
  return marked;
}

namespace {

struct BaseRecord {
  std::string key;
  std::string value;  // kept only for pieces being rewritten
  uint64_t hash = 0;
  uint64_t h2 = 0;
  uint64_t payload_bytes = 0;
  uint64_t slot = 0;
  uint32_t piece = 0;
  uint32_t segment = 0;
  ValueKind kind = ValueKind::kValue;
  bool index_invalid = false;  // deleted per the index; no record backs it
};

struct BaseScan {
  std::vector<BaseRecord> current;                  // sorted by key, unique
  std::vector<std::pair<uint64_t, uint32_t>> held;  // (key hash, piece) of every stored record
  uint64_t bytes_read = 0;
};

Result<BaseScan> ScanBase(const Tph& tph, const std::vector<bool>& keep_values, IoPurpose purpose) {
  BaseScan scan;
  const uint64_t seed = tph.hash_seed();
  for (uint32_t p = 0; p < tph.pieces().size(); ++p) {
    const piece::PieceReader& reader = *tph.pieces()[p];
    for (const auto& seg : reader.segments()) scan.bytes_read += seg.meta.blocks_len;
    Status s = reader.ForEachRecord(purpose, [&](uint32_t seg, uint64_t slot, const piece::EntryView& e) {
      KeyDigest d = DigestKey(e.key, seed);
      scan.held.emplace_back(d.hash, p);
      Tph::Probe probe = tph.ProbeIndex(d.hash);
      if (!probe.signature_match) return Status::OK();
      if (probe.piece != p && probe.piece != kInvalidPiece) return Status::OK();  // stale version
      BaseRecord r;
      r.key.assign(e.key);
      r.hash = d.hash;
      r.h2 = d.h2;
      r.piece = p;
      r.segment = seg;
      r.slot = slot;
      if (probe.piece == kInvalidPiece) {
        r.kind = ValueKind::kTombstone;
        r.index_invalid = true;
      } else {
        r.kind = e.kind;
        if (keep_values[p]) r.value.assign(e.value);
      }
      r.payload_bytes = e.key.size() + (r.kind == ValueKind::kValue ? e.value.size() : 0);
      scan.current.push_back(std::move(r));
      return Status::OK();
    });
    TPHKV_RETURN_IF_ERROR(s);
  }
  std::sort(scan.current.begin(), scan.current.end(), [](const BaseRecord& a, const BaseRecord& b) {
    if (a.key != b.key) return a.key < b.key;
    return a.index_invalid < b.index_invalid;
  });
  auto last = std::unique(scan.current.begin(), scan.current.end(),
                          [](const BaseRecord& a, const BaseRecord& b) { return a.key == b.key; });
  scan.current.erase(last, scan.current.end());
  return scan;
}

enum class Source : uint8_t {
  kNew,      // record written to the new head piece
  kKeep,     // record stays in its base piece
  kInvalid,  // indexed as deleted, no record
  kDrop,     // removed from the index
};

struct FinalEntry {
  std::string_view key;
  uint64_t hash = 0;
  uint64_t h2 = 0;
  ValueKind kind = ValueKind::kValue;
  Source src = Source::kNew;
  const Record* rec = nullptr;        // kNew
  const BaseRecord* base = nullptr;   // kKeep / base-derived entries
  uint64_t payload_bytes = 0;
  uint32_t segment = 0;               // in the new piece, kNew only
  uint64_t slot = 0;
};

uint64_t SegmentSeed(uint64_t hash_seed, uint64_t piece_seq, uint32_t segment) {
  return Fmix64(hash_seed ^ (piece_seq * 0x9e3779b97f4a7c15ULL) ^ (uint64_t{segment} << 1 | 1));
}

uint64_t GlobalSeed(uint64_t hash_seed, uint64_t piece_seq) {
  return Fmix64(hash_seed + piece_seq * 0xc2b2ae3d27d4eb4fULL);
}

}  // namespace

Result<std::vector<Record>> ReadCurrentRecords(const Tph& tph, IoPurpose purpose) {
  std::vector<bool> keep(tph.pieces().size(), true);
  TPHKV_ASSIGN_OR_RETURN(BaseScan scan, ScanBase(tph, keep, purpose));
  std::vector<Record> out;
  out.reserve(scan.current.size());
  for (BaseRecord& b : scan.current) {
    out.push_back(Record{std::move(b.key), b.kind, b.kind == ValueKind::kValue ? std::move(b.value) : std::string()});
  }
  return out;
}

Result<MergeResult> MergeIntoTph(const Tph* base, std::span<const Record> delta, const MergeOptions& opts) {
  for (size_t i = 0; i < delta.size(); ++i) {
    if (delta[i].key.empty()) return Status::InvalidArgument("empty key in delta");
    if (i > 0 && !(delta[i - 1].key < delta[i].key)) return Status::InvalidArgument("delta not sorted and unique");
  }
  if (opts.segment_count == 0 || opts.segment_count > piece::kMaxSegments) {
    return Status::InvalidArgument("segment_count out of range");
  }
  MergeResult result;
  MergeStats& st = result.stats;
  const size_t n = base ? base->pieces().size() : 0;

  std::vector<bool> marked(n, false);
  BaseScan scan;
  if (n > 0) {
    marked = SelectGcPieces(*base, opts.max_pieces, opts.invalid_ratio_threshold);
    for (bool m : marked) st.gc_marked_pieces += m;
    TPHKV_ASSIGN_OR_RETURN(scan, ScanBase(*base, marked, IoPurpose::kCompaction));
    st.base_bytes_read = scan.bytes_read;
  }

  // Rewritten and synthesized records; at most one per base record, so the
  // reservation keeps their addresses fixed.
  std::vector<Record> owned;
  owned.reserve(scan.current.size());

  // MergeArray cells in key order: delta-only, base-only, or both.
  std::vector<FinalEntry> cells;
  cells.reserve(delta.size() + scan.current.size());
  size_t i = 0, j = 0;
  while (i < delta.size() || j < scan.current.size()) {
    int cmp;
    if (i == delta.size()) {
      cmp = 1;
    } else if (j == scan.current.size()) {
      cmp = -1;
    } else {
      cmp = delta[i].key.compare(scan.current[j].key);
    }
    FinalEntry f;
    if (cmp <= 0) {
      const Record& r = delta[i++];
      if (cmp == 0) ++j;  // delta is newer
      KeyDigest d = DigestKey(r.key, opts.hash_seed);
      f.key = r.key;
      f.hash = d.hash;
      f.h2 = d.h2;
      f.kind = r.kind;
      f.src = Source::kNew;
      f.rec = &r;
      f.payload_bytes = r.payload_bytes();
      ++st.delta_records;
      st.delta_bytes += f.payload_bytes;
    } else {
      const BaseRecord& b = scan.current[j++];
      f.key = b.key;
      f.hash = b.hash;
      f.h2 = b.h2;
      f.kind = b.kind;
      f.base = &b;
      f.payload_bytes = b.payload_bytes;
      if (b.index_invalid) {
        f.src = Source::kInvalid;
      } else if (marked[b.piece]) {
        owned.push_back(Record{b.key, b.kind, b.value});
        f.src = Source::kNew;
        f.rec = &owned.back();
        ++st.rewritten_records;
        st.rewritten_bytes += f.payload_bytes;
      } else {
        f.src = Source::kKeep;
      }
    }
    cells.push_back(f);
  }

  // Which base pieces keep at least one current record.
  std::vector<uint64_t> new_live(n, 0);
  for (const FinalEntry& f : cells) {
    if (f.src != Source::kKeep) continue;
    if (opts.bottom && f.kind == ValueKind::kTombstone) continue;
    ++new_live[f.base->piece];
  }
  std::vector<bool> survives(n, false);
  for (size_t p = 0; p < n; ++p) survives[p] = !marked[p] && new_live[p] > 0;

  if (opts.bottom) {
    std::vector<uint64_t> held;
    for (const auto& [h, p] : scan.held) {
      if (survives[p]) held.push_back(h);
    }
    std::sort(held.begin(), held.end());
    for (FinalEntry& f : cells) {
      if (f.kind != ValueKind::kTombstone) continue;
      if (std::binary_search(held.begin(), held.end(), f.hash)) {
        f.src = Source::kInvalid;
      } else {
        f.src = Source::kDrop;
        ++st.dropped_tombstones;
      }
    }
  } else {
    for (FinalEntry& f : cells) {
      if (f.src != Source::kInvalid) continue;
      owned.push_back(Record{std::string(f.key), ValueKind::kTombstone, std::string()});
      f.src = Source::kNew;
      f.rec = &owned.back();
    }
  }

  std::vector<uint64_t> old_seqs = base ? base->meta().piece_seqs : std::vector<uint64_t>{};
  std::vector<uint32_t> new_pos(n, kInvalidPiece);
  std::vector<uint64_t> piece_seqs;
  uint64_t file_bytes = 0;
  for (size_t p = 0; p < n; ++p) {
    if (survives[p]) {
      new_pos[p] = static_cast<uint32_t>(piece_seqs.size());
      piece_seqs.push_back(old_seqs[p]);
      file_bytes += base->pieces()[p]->file_size();
    } else {
      result.obsolete_pieces.push_back(old_seqs[p]);
    }
  }
  const uint32_t head_pos = static_cast<uint32_t>(piece_seqs.size());

  std::vector<uint64_t> index_hashes;
  index_hashes.reserve(cells.size());
  for (const FinalEntry& f : cells) {
    if (f.src != Source::kDrop) index_hashes.push_back(f.hash);
  }

  result.meta.tph_id = opts.tph_id;
  result.meta.level = opts.level;
  result.meta.index = opts.index;
  result.meta.search_lo = opts.search_lo;
  result.meta.search_hi = opts.search_hi;
  if (index_hashes.empty()) {
    // Nothing left: the TPH becomes empty and every piece is released.
    result.meta.piece_seqs.clear();
    return result;
  }

  // Place new records into segments of the head piece.
  const uint32_t segs = opts.segment_count;
  std::vector<std::vector<const Record*>> seg_records(segs);
  std::vector<std::vector<uint64_t>> seg_hashes(segs);
  uint64_t new_bytes = 0, new_count = 0;
  for (FinalEntry& f : cells) {
    if (f.src != Source::kNew) continue;
    f.segment = static_cast<uint32_t>(f.h2 % segs);
    seg_records[f.segment].push_back(f.rec);
    seg_hashes[f.segment].push_back(f.hash);
    new_bytes += f.rec->payload_bytes() + 4;
    ++new_count;
  }
  const uint32_t block_k = piece::ComputeBlockK(opts.page_size, new_count == 0 ? opts.page_size : new_bytes / new_count);
  std::vector<piece::SegmentInput> inputs;
  inputs.reserve(segs);
  for (uint32_t s = 0; s < segs; ++s) {
    TPHKV_ASSIGN_OR_RETURN(piece::SegmentInput in, piece::PlaceSegment(seg_records[s], seg_hashes[s],
                                                                        SegmentSeed(opts.hash_seed, opts.new_piece_seq, s),
                                                                        opts.cphash));
    inputs.push_back(std::move(in));
  }
  for (FinalEntry& f : cells) {
    if (f.src == Source::kNew) f.slot = inputs[f.segment].local.Evaluate(f.hash);
  }

  // Global index and reverse index over every indexed key.
  piece::GlobalIndexSection global;
  TPHKV_ASSIGN_OR_RETURN(global.fn, cphash::PerfectHashFn::Build(index_hashes, GlobalSeed(opts.hash_seed, opts.new_piece_seq),
                                                                 opts.cphash));
  piece_seqs.push_back(opts.new_piece_seq);
  global.piece_seqs = piece_seqs;
  global.signatures.assign(global.fn.table_size(), 0);
  global.piece_index = PackedArray(global.fn.table_size(), piece::kPieceIndexBits);
  for (uint64_t s = 0; s < global.fn.table_size(); ++s) global.piece_index.Set(s, kInvalidPiece);

  std::vector<std::pair<std::string_view, uint64_t>> sorted;
  sorted.reserve(cells.size());
  uint64_t live_bytes = 0;
  for (const FinalEntry& f : cells) {
    if (f.src == Source::kDrop) continue;
    uint64_t slot = global.fn.Evaluate(f.hash);
    global.signatures[slot] = piece::SignatureOf(f.hash);
    if (f.src == Source::kInvalid) continue;
    Locator loc;
    if (f.src == Source::kNew) {
      loc = {head_pos, f.segment, f.slot};
    } else {
      loc = {new_pos[f.base->piece], f.base->segment, f.base->slot};
    }
    global.piece_index.Set(slot, loc.piece);
    sorted.emplace_back(f.key, loc.Pack());
    if (f.kind == ValueKind::kValue) live_bytes += f.payload_bytes;
  }
  piece::ReverseIndexSection reverse = BuildReverseIndex(std::move(sorted), opts.sample_interval);

  std::error_code ec;
  std::filesystem::create_directories(opts.tph_dir, ec);
  if (ec) return Status::IoError("create " + opts.tph_dir + ": " + ec.message());
  TPHKV_ASSIGN_OR_RETURN(auto file, WritableFile::Create(opts.tph_dir + "/" + PieceFileName(opts.new_piece_seq),
                                                         opts.direct_io, opts.stats, WritePurpose::kTable));
  piece::PieceFooter footer;
  footer.tph_id = opts.tph_id;
  footer.piece_seq = opts.new_piece_seq;
  footer.level = opts.level;
  footer.search_lo = opts.search_lo;
  footer.search_hi = opts.search_hi;
  footer.hash_seed = opts.hash_seed;
  piece::HeadSections head{&global, &reverse};
  TPHKV_ASSIGN_OR_RETURN(piece::PieceWriteResult written, piece::WritePiece(file.get(), inputs, block_k, head, footer));
  TPHKV_RETURN_IF_ERROR(file->Close(/*sync=*/true));

  st.records_written = written.footer.key_count;
  st.kv_bytes_written = written.footer.raw_kv_bytes;
  st.piece_bytes = written.file_bytes;
  st.segment_bytes = written.segment_bytes;
  st.index_bytes = written.index_bytes;

  result.meta.piece_seqs = std::move(piece_seqs);
  result.meta.live_keys = index_hashes.size();
  result.meta.live_bytes = live_bytes;
  result.meta.file_bytes = file_bytes + written.file_bytes;
  return result;
}

}  // namespace tphkv
