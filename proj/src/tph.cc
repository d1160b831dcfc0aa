#include "tphkv/tph.h"

#include <algorithm>
#include <cstdio>

namespace tphkv {

using piece::kInvalidPiece;
using piece::Locator;

std::string TphDirName(uint64_t tph_id) { return std::to_string(tph_id); }

std::string PieceFileName(uint64_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06llu.ph", static_cast<unsigned long long>(seq));
  return buf;
}

Result<std::shared_ptr<const Tph>> Tph::Load(const TphMeta& meta, const std::string& dir, uint64_t hash_seed,
                                             bool direct_io, std::shared_ptr<IoStats> stats) {
  std::shared_ptr<Tph> t(new Tph);
  t->meta_ = meta;
  t->hash_seed_ = hash_seed;
  t->stats_ = stats;
  for (uint64_t seq : meta.piece_seqs) {
    TPHKV_ASSIGN_OR_RETURN(auto reader, piece::PieceReader::Open(dir + "/" + PieceFileName(seq), direct_io, stats));
    if (reader->footer().hash_seed != hash_seed || reader->footer().piece_seq != seq) {
      return Status(Code::kCorruptIndex, "piece identity does not match manifest: " + PieceFileName(seq));
    }
    t->pieces_.push_back(std::move(reader));
  }
  if (t->pieces_.empty()) return std::shared_ptr<const Tph>(std::move(t));

  const piece::PieceReader& head = *t->pieces_.back();
  if (!head.footer().is_head()) return Status(Code::kCorruptIndex, "newest piece carries no global index");
  TPHKV_ASSIGN_OR_RETURN(t->global_, head.ReadGlobalIndex());
  if (t->global_.piece_seqs != meta.piece_seqs) return Status(Code::kCorruptIndex, "global index piece list mismatch");
  if (head.footer().has_reverse_index()) {
    TPHKV_ASSIGN_OR_RETURN(t->samples_, head.ReadSamples(&t->sample_interval_, &t->indexed_records_));
  }
  return std::shared_ptr<const Tph>(std::move(t));
}

Tph::Probe Tph::ProbeIndex(uint64_t key_hash) const {
  Probe p;
  if (global_.table_size() == 0) return p;
  p.slot = global_.fn.Evaluate(key_hash);
  uint8_t sig = global_.signatures[p.slot];
  p.signature_match = sig != 0 && sig == piece::SignatureOf(key_hash);
  p.piece = global_.piece_index.Get(p.slot);
  return p;
}

Status Tph::Get(std::string_view key, const KeyDigest& digest, LookupState* state, std::string* value) const {
  *state = LookupState::kNotFound;
  if (pieces_.empty()) return Status::OK();
  Probe p = ProbeIndex(digest.hash);
  if (!p.signature_match) return Status::OK();
  if (p.piece == kInvalidPiece) {
    *state = LookupState::kDeleted;
    return Status::OK();
  }
  if (p.piece >= pieces_.size()) return Status(Code::kCorruptIndex, "piece index names a missing piece");
  const piece::PieceReader& reader = *pieces_[p.piece];
  uint32_t seg = static_cast<uint32_t>(digest.h2 % reader.footer().segment_count);
  const piece::SegmentIndex& si = reader.segments()[seg];
  if (si.local.table_size() == 0) return Status::OK();
  uint64_t slot = si.local.Evaluate(digest.hash);
  piece::Block block;
  piece::EntryView e;
  if (stats_) Bump(stats_->block_reads, 1);
  TPHKV_RETURN_IF_ERROR(reader.ReadSlot(seg, slot, IoPurpose::kUser, &block, &e));
  if (e.empty() || e.key != key) return Status::OK();  // signature false positive
  if (e.kind == piece::ValueKind::kTombstone) {
    *state = LookupState::kDeleted;
    return Status::OK();
  }
  *state = LookupState::kFound;
  value->assign(e.value.data(), e.value.size());
  return Status::OK();
}

Result<std::shared_ptr<const std::vector<uint64_t>>> Tph::Locators() const {
  std::lock_guard<std::mutex> l(locators_mu_);
  if (locators_) return locators_;
  if (pieces_.empty()) {
    locators_ = std::make_shared<const std::vector<uint64_t>>();
    return locators_;
  }
  TPHKV_ASSIGN_OR_RETURN(std::vector<uint64_t> locs, pieces_.back()->ReadLocators());
  locators_ = std::make_shared<const std::vector<uint64_t>>(std::move(locs));
  return locators_;
}

Status Tph::ReadLocator(uint64_t packed, IoPurpose purpose, piece::Block* block, piece::EntryView* entry) const {
  Locator loc = Locator::Unpack(packed);
  if (loc.piece >= pieces_.size()) return Status(Code::kCorruptIndex, "locator names a missing piece");
  if (stats_ && purpose == IoPurpose::kUser) Bump(stats_->block_reads, 1);
  return pieces_[loc.piece]->ReadSlot(loc.segment, loc.slot, purpose, block, entry);
}

size_t Tph::ResidentBytes() const {
  size_t total = sizeof(Tph) + global_.MemoryBytes();
  for (const auto& s : samples_) total += sizeof(piece::Sample) + s.key.capacity();
  for (const auto& p : pieces_) total += p->ResidentBytes();
  return total;
}

std::unique_ptr<TphIterator> Tph::NewIterator(bool include_tombstones) const {
  return std::make_unique<TphIterator>(shared_from_this(), include_tombstones);
}

bool TphIterator::EnsureLocators() {
  if (locators_) return true;
  auto r = tph_->Locators();
  if (!r.ok()) {
    status_ = r.status();
    valid_ = false;
    return false;
  }
  locators_ = std::move(r.value());
  return true;
}

Status TphIterator::LoadRank(uint64_t rank) {
  uint64_t packed = (*locators_)[rank];
  Locator loc = Locator::Unpack(packed);
  const auto& pieces = tph_->pieces();
  if (loc.piece >= pieces.size()) return Status(Code::kCorruptIndex, "locator names a missing piece");
  const piece::PieceReader& reader = *pieces[loc.piece];
  if (loc.segment >= reader.segments().size()) return Status(Code::kCorruptIndex, "locator segment out of range");
  piece::SlotLocation sl = piece::ResolveSlot(loc.slot, reader.segments()[loc.segment].meta.block_k);
  uint64_t block_id = (packed & ~((uint64_t{1} << 40) - 1)) | sl.block;
  if (block_id != cached_block_id_) {
    cached_block_id_ = ~uint64_t{0};
    TPHKV_RETURN_IF_ERROR(tph_->ReadLocator(packed, IoPurpose::kUser, &block_, &entry_));
    cached_block_id_ = block_id;
    return Status::OK();
  }
  if (sl.entry >= block_.size()) return Status(Code::kCorruptIndex, "slot beyond block entries");
  TPHKV_ASSIGN_OR_RETURN(entry_, block_.entry(sl.entry));
  return Status::OK();
}

void TphIterator::Settle() {
  valid_ = false;
  while (rank_ < locators_->size()) {
    status_ = LoadRank(rank_);
    if (!status_.ok()) return;
    if (entry_.empty()) {
      status_ = Status(Code::kCorruptIndex, "locator resolves to an empty slot");
      return;
    }
    if (include_tombstones_ || entry_.kind != piece::ValueKind::kTombstone) {
      valid_ = true;
      return;
    }
    ++rank_;
  }
}

void TphIterator::SeekToFirst() {
  if (!EnsureLocators()) return;
  rank_ = 0;
  Settle();
}

void TphIterator::Seek(std::string_view start) {
  if (!EnsureLocators()) return;
  const auto& samples = tph_->samples();
  auto it = std::upper_bound(samples.begin(), samples.end(), start,
                             [](std::string_view k, const piece::Sample& s) { return k < std::string_view(s.key); });
  rank_ = it == samples.begin() ? 0 : std::prev(it)->rank;
  while (rank_ < locators_->size()) {
    status_ = LoadRank(rank_);
    if (!status_.ok()) {
      valid_ = false;
      return;
    }
    if (entry_.key >= start) break;
    ++rank_;
  }
  Settle();
}

void TphIterator::Next() {
  if (!valid_) return;
  ++rank_;
  Settle();
}

}  // namespace tphkv
