#include "tphkv/piece_format.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>

#include "test_util.h"
#include "tphkv/coding.h"
#include "tphkv/hash.h"

namespace tphkv::piece {
namespace {

using tphkv::testing::FlipByte;
using tphkv::testing::TempDir;

constexpr uint64_t kSeed = 0x1234;

std::vector<Record> RandomRecords(size_t n, uint64_t seed, size_t value_size = 40) {
  std::mt19937_64 rng(seed);
  std::map<std::string, Record> uniq;
  while (uniq.size() < n) {
    Record r;
    r.key = "key" + std::to_string(rng());
    r.value.resize(value_size);
    for (auto& c : r.value) c = static_cast<char>('a' + rng() % 26);
    uniq[r.key] = r;
  }
  std::vector<Record> out;
  for (auto& [k, r] : uniq) out.push_back(std::move(r));
  return out;
}

struct Built {
  PieceWriteResult result;
  GlobalIndexSection global;
  ReverseIndexSection reverse;
  std::vector<std::vector<const Record*>> by_segment;
};

// Shards records by secondary hash, places each shard with its own local fn
// and writes one piece. Head pieces carry a global index over all keys.
Built WriteTestPiece(const std::string& path, const std::vector<Record>& records, uint32_t segments,
                     uint32_t block_k, bool head, std::shared_ptr<IoStats> stats = nullptr,
                     uint64_t max_segment_bytes = kMaxSegmentBytes - 1) {
  Built b;
  b.by_segment.resize(segments);
  std::vector<std::vector<uint64_t>> hashes(segments);
  std::vector<uint64_t> all;
  for (const Record& r : records) {
    KeyDigest d = DigestKey(r.key, kSeed);
    b.by_segment[d.h2 % segments].push_back(&r);
    hashes[d.h2 % segments].push_back(d.hash);
    all.push_back(d.hash);
  }
  std::vector<SegmentInput> inputs;
  for (uint32_t s = 0; s < segments; ++s) {
    auto placed = PlaceSegment(b.by_segment[s], hashes[s], kSeed + s, {});
    EXPECT_TRUE(placed.ok()) << placed.status().ToString();
    inputs.push_back(std::move(placed.value()));
  }
  HeadSections hs;
  if (head) {
    auto fn = cphash::PerfectHashFn::Build(all, kSeed, {});
    EXPECT_TRUE(fn.ok());
    b.global.fn = std::move(fn.value());
    b.global.piece_seqs = {7};
    b.global.signatures.assign(b.global.fn.table_size(), 0);
    b.global.piece_index = PackedArray(b.global.fn.table_size(), kPieceIndexBits);
    for (size_t i = 0; i < b.global.fn.table_size(); ++i) b.global.piece_index.Set(i, kInvalidPiece);
    for (uint64_t h : all) {
      uint64_t slot = b.global.fn.Evaluate(h);
      b.global.signatures[slot] = SignatureOf(h);
      b.global.piece_index.Set(slot, 0);
    }
    for (size_t i = 0; i < records.size(); i += b.reverse.interval) b.reverse.samples.push_back({records[i].key, i});
    b.reverse.locators.assign(records.size(), 0);
    hs.global = &b.global;
    hs.reverse = &b.reverse;
  }
  auto file = WritableFile::Create(path, false, stats, WritePurpose::kTable);
  EXPECT_TRUE(file.ok());
  PieceFooter f;
  f.tph_id = 3;
  f.piece_seq = 7;
  f.level = 1;
  f.search_lo = 0;
  f.search_hi = uint64_t{1} << 32;
  f.hash_seed = kSeed;
  auto res = WritePiece(file->get(), inputs, block_k, hs, f, max_segment_bytes);
  if (!res.ok()) {
    b.result.footer.key_count = ~uint64_t{0};
    EXPECT_EQ(res.status().code(), Code::kSegmentOverflow);
    return b;
  }
  EXPECT_TRUE((*file)->Close().ok());
  b.result = res.value();
  return b;
}

TEST(ComputeBlockK, FloorDivision) { EXPECT_EQ(ComputeBlockK(4096, 300), 13u); }
TEST(ComputeBlockK, ClampsAtOne) { EXPECT_EQ(ComputeBlockK(4096, 8192), 1u); }
TEST(ComputeBlockK, SixteenEntriesAt256Bytes) { EXPECT_EQ(ComputeBlockK(4096, 256), 16u); }

TEST(ResolveSlot, Examples) {
  EXPECT_EQ(ResolveSlot(0, 16), (SlotLocation{0, 0}));
  EXPECT_EQ(ResolveSlot(17, 16), (SlotLocation{1, 1}));
}

TEST(Signature, DeterministicAndNonZero) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100000; ++i) {
    uint64_t h = rng();
    uint8_t s = SignatureOf(h);
    EXPECT_NE(s, 0);
    EXPECT_EQ(s, SignatureOf(h));
  }
}

TEST(Signature, FalsePositiveRateNear1In255) {
  // An absent key matches when its signature equals the stored one at the
  // slot it maps to; model the stored signature as that of a random key.
  std::mt19937_64 rng(6);
  const int kProbes = 1000000;
  int matches = 0;
  for (int i = 0; i < kProbes; ++i) matches += SignatureOf(rng()) == SignatureOf(rng());
  double rate = static_cast<double>(matches) / kProbes;
  EXPECT_NEAR(rate, 1.0 / 255, 0.2 / 255);
}

TEST(Signature, IndependentOfSlot) {
  // Keys sharing a global slot must not share a signature more often than chance.
  std::vector<uint64_t> keys;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200000; ++i) keys.push_back(rng());
  std::vector<uint64_t> members(keys.begin(), keys.begin() + 1000);
  auto fn = cphash::PerfectHashFn::Build(members, 9, {});
  ASSERT_TRUE(fn.ok());
  std::vector<uint8_t> sig(fn->table_size(), 0);
  for (uint64_t k : members) sig[fn->Evaluate(k)] = SignatureOf(k);
  int occupied = 0, matches = 0;
  for (size_t i = 1000; i < keys.size(); ++i) {
    uint8_t stored = sig[fn->Evaluate(keys[i])];
    if (stored == 0) continue;
    ++occupied;
    matches += stored == SignatureOf(keys[i]);
  }
  double rate = static_cast<double>(matches) / occupied;
  EXPECT_NEAR(rate, 1.0 / 255, 0.35 / 255);
}

TEST(Block, EncodeDecodeWithSentinels) {
  Record a{"alpha", ValueKind::kValue, "one"};
  Record t{"gone", ValueKind::kTombstone, ""};
  std::vector<const Record*> slots = {&a, nullptr, &t};
  auto block = Block::Decode(EncodeBlock(slots));
  ASSERT_TRUE(block.ok());
  ASSERT_EQ(block->size(), 3u);
  EXPECT_EQ(block->entry(0)->key, "alpha");
  EXPECT_EQ(block->entry(0)->value, "one");
  EXPECT_TRUE(block->entry(1)->empty());
  EXPECT_EQ(block->entry(2)->kind, ValueKind::kTombstone);
  EXPECT_TRUE(block->entry(2)->value.empty());
}

TEST(Block, WideOffsetsForLargeBlocks) {
  std::vector<Record> recs;
  for (int i = 0; i < 4; ++i) recs.push_back({"k" + std::to_string(i), ValueKind::kValue, std::string(30000, 'v')});
  std::vector<const Record*> slots;
  for (auto& r : recs) slots.push_back(&r);
  auto block = Block::Decode(EncodeBlock(slots));
  ASSERT_TRUE(block.ok());
  EXPECT_EQ(block->entry(3)->key, "k3");
  EXPECT_EQ(block->entry(3)->value.size(), 30000u);
}

TEST(Block, EveryByteFlipDetected) {
  Record a{"alpha", ValueKind::kValue, "one"};
  std::vector<const Record*> slots = {&a, nullptr};
  std::string enc = EncodeBlock(slots);
  for (size_t i = 0; i < enc.size(); ++i) {
    std::string bad = enc;
    bad[i] ^= 0x01;
    EXPECT_FALSE(Block::Decode(bad).ok()) << i;
  }
}

TEST(Footer, RoundTrip) {
  PieceFooter f;
  f.tph_id = 11;
  f.piece_seq = 12;
  f.level = 3;
  f.segment_count = 64;
  f.segdir_offset = 1000;
  f.segdir_len = 200;
  f.global_offset = 1200;
  f.global_len = 300;
  f.search_lo = 5;
  f.search_hi = 9;
  f.flags = PieceFooter::kFlagHead;
  f.key_count = 42;
  f.hash_seed = 99;
  std::string enc = f.Encode();
  ASSERT_EQ(enc.size(), kFooterSize);
  EXPECT_EQ(enc.substr(0, 4), "TPHF");
  auto d = PieceFooter::Decode(enc);
  ASSERT_TRUE(d.ok());
  EXPECT_EQ(*d, f);
}

TEST(Footer, RejectsBadVersionAndMagic) {
  PieceFooter f;
  f.format_version = 2;
  EXPECT_EQ(PieceFooter::Decode(f.Encode()).status().code(), Code::kVersionMismatch);
  std::string enc = PieceFooter().Encode();
  enc[0] = 'X';
  EXPECT_EQ(PieceFooter::Decode(enc).status().code(), Code::kVersionMismatch);
  enc = PieceFooter().Encode();
  enc[100] ^= 1;
  EXPECT_EQ(PieceFooter::Decode(enc).status().code(), Code::kChecksumMismatch);
}

TEST(WritePiece, EmptyHeadPiece) {
  TempDir dir;
  std::vector<Record> none;
  Built b = WriteTestPiece(dir.file("e.ph"), none, 4, 13, true);
  auto r = PieceReader::Open(dir.file("e.ph"), false, nullptr);
  ASSERT_TRUE(r.ok()) << r.status().ToString();
  EXPECT_EQ((*r)->footer().key_count, 0u);
  EXPECT_TRUE((*r)->footer().is_head());
  auto g = (*r)->ReadGlobalIndex();
  ASSERT_TRUE(g.ok()) << g.status().ToString();
  EXPECT_EQ(g->table_size(), 0u);
}

TEST(WritePiece, RoundTrip10kRecords) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(10000, 1);
  Built b = WriteTestPiece(dir.file("p.ph"), recs, 8, 13, true);
  auto r = PieceReader::Open(dir.file("p.ph"), false, nullptr);
  ASSERT_TRUE(r.ok()) << r.status().ToString();
  const PieceFooter& f = (*r)->footer();
  EXPECT_EQ(f, b.result.footer);
  EXPECT_EQ(f.key_count, 10000u);
  EXPECT_EQ(f.block_k, 13u);
  EXPECT_EQ((*r)->file_size(), b.result.file_bytes);

  // Every key read back through its segment's local fn.
  for (const Record& rec : recs) {
    KeyDigest d = DigestKey(rec.key, kSeed);
    uint32_t seg = static_cast<uint32_t>(d.h2 % 8);
    uint64_t slot = (*r)->segments()[seg].local.Evaluate(d.hash);
    Block block;
    EntryView e;
    ASSERT_TRUE((*r)->ReadSlot(seg, slot, IoPurpose::kUser, &block, &e).ok());
    ASSERT_EQ(e.key, rec.key);
    ASSERT_EQ(e.value, rec.value);
  }

  // Head sections reproduce bit-exactly.
  auto g = (*r)->ReadGlobalIndex();
  ASSERT_TRUE(g.ok());
  EXPECT_EQ(g->piece_seqs, b.global.piece_seqs);
  EXPECT_EQ(g->signatures, b.global.signatures);
  EXPECT_TRUE(g->piece_index == b.global.piece_index);
  EXPECT_EQ(g->fn.Serialize(), b.global.fn.Serialize());
  uint32_t interval = 0;
  uint64_t count = 0;
  auto samples = (*r)->ReadSamples(&interval, &count);
  ASSERT_TRUE(samples.ok());
  EXPECT_EQ(interval, 64u);
  EXPECT_EQ(count, 10000u);
  EXPECT_EQ(*samples, b.reverse.samples);
  for (size_t i = 0; i < samples->size(); ++i) EXPECT_EQ((*samples)[i].rank, i * interval);
  auto locs = (*r)->ReadLocators();
  ASSERT_TRUE(locs.ok());
  EXPECT_EQ(*locs, b.reverse.locators);
}

TEST(WritePiece, ForEachRecordVisitsEverything) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(3000, 2);
  WriteTestPiece(dir.file("p.ph"), recs, 4, 7, false);
  auto r = PieceReader::Open(dir.file("p.ph"), false, nullptr);
  ASSERT_TRUE(r.ok());
  EXPECT_FALSE((*r)->footer().is_head());
  EXPECT_EQ((*r)->ReadSamples(nullptr, nullptr).status().code(), Code::kNoReverseIndex);
  std::map<std::string, std::string> seen;
  Status s = (*r)->ForEachRecord(IoPurpose::kCompaction, [&](uint32_t seg, uint64_t slot, const EntryView& e) {
    EXPECT_LT(slot, (*r)->segments()[seg].local.table_size());
    seen[std::string(e.key)] = std::string(e.value);
    return Status::OK();
  });
  ASSERT_TRUE(s.ok());
  ASSERT_EQ(seen.size(), recs.size());
  for (const Record& rec : recs) EXPECT_EQ(seen[rec.key], rec.value);
}

TEST(WritePiece, TombstoneRecord) {
  TempDir dir;
  std::vector<Record> recs = {{"dead", ValueKind::kTombstone, ""}};
  Built b = WriteTestPiece(dir.file("t.ph"), recs, 1, 16, false);
  EXPECT_EQ(b.result.footer.tombstone_count, 1u);
  auto r = PieceReader::Open(dir.file("t.ph"), false, nullptr);
  ASSERT_TRUE(r.ok());
  uint64_t slot = (*r)->segments()[0].local.Evaluate(DigestKey("dead", kSeed).hash);
  Block block;
  EntryView e;
  ASSERT_TRUE((*r)->ReadSlot(0, slot, IoPurpose::kUser, &block, &e).ok());
  EXPECT_EQ(e.key, "dead");
  EXPECT_EQ(e.kind, ValueKind::kTombstone);
  EXPECT_TRUE(e.value.empty());
}

TEST(ResolveSlot, MatchesLinearScanOfDecodedBlocks) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(2000, 3);
  WriteTestPiece(dir.file("p.ph"), recs, 1, 13, false);
  auto r = PieceReader::Open(dir.file("p.ph"), false, nullptr);
  ASSERT_TRUE(r.ok());
  const SegmentIndex& seg = (*r)->segments()[0];
  // Oracle: concatenate every entry of every block in order.
  std::vector<std::string> flat;
  for (uint64_t b = 0; b < seg.meta.num_blocks; ++b) {
    auto block = (*r)->ReadBlock(0, b, IoPurpose::kLoad);
    ASSERT_TRUE(block.ok());
    for (size_t i = 0; i < block->size(); ++i) flat.emplace_back(block->entry(i)->key);
  }
  ASSERT_GE(flat.size(), seg.local.table_size());
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    uint64_t slot = rng() % seg.local.table_size();
    SlotLocation loc = ResolveSlot(slot, seg.meta.block_k);
    auto block = (*r)->ReadBlock(0, loc.block, IoPurpose::kLoad);
    ASSERT_TRUE(block.ok());
    EXPECT_EQ(block->entry(loc.entry)->key, flat[slot]);
  }
}

TEST(ReadBlock, ExactlyOneReadOperation) {
  TempDir dir;
  auto stats = std::make_shared<IoStats>();
  std::vector<Record> recs = RandomRecords(5000, 5);
  WriteTestPiece(dir.file("p.ph"), recs, 4, 13, true);
  auto r = PieceReader::Open(dir.file("p.ph"), false, stats);
  ASSERT_TRUE(r.ok());
  for (const Record& rec : recs) {
    KeyDigest d = DigestKey(rec.key, kSeed);
    uint32_t seg = static_cast<uint32_t>(d.h2 % 4);
    uint64_t slot = (*r)->segments()[seg].local.Evaluate(d.hash);
    uint64_t ops_before = (*r)->file().read_ops();
    uint64_t bytes_before = stats->disk_bytes_read.load();
    Block block;
    EntryView e;
    ASSERT_TRUE((*r)->ReadSlot(seg, slot, IoPurpose::kUser, &block, &e).ok());
    ASSERT_EQ((*r)->file().read_ops() - ops_before, 1u);
    SlotLocation loc = ResolveSlot(slot, 13);
    const SegmentIndex& si = (*r)->segments()[seg];
    ASSERT_EQ(stats->disk_bytes_read.load() - bytes_before, si.BlockEnd(loc.block) - si.BlockBegin(loc.block));
  }
}

TEST(ReadBlock, SingleBlockSegmentHoldsAllEntries) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(5, 6);
  WriteTestPiece(dir.file("p.ph"), recs, 1, 100, false);
  auto r = PieceReader::Open(dir.file("p.ph"), false, nullptr);
  ASSERT_TRUE(r.ok());
  ASSERT_EQ((*r)->segments()[0].meta.num_blocks, 1u);
  auto block = (*r)->ReadBlock(0, 0, IoPurpose::kUser);
  ASSERT_TRUE(block.ok());
  size_t live = 0;
  for (size_t i = 0; i < block->size(); ++i) live += !block->entry(i)->empty();
  EXPECT_EQ(live, 5u);
}

TEST(ReadBlock, CorruptByteIsChecksumMismatch) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(500, 7);
  WriteTestPiece(dir.file("p.ph"), recs, 1, 13, false);
  std::mt19937_64 rng(8);
  std::string path = dir.file("p.ph");
  for (int trial = 0; trial < 20; ++trial) {
    std::filesystem::copy_file(path, dir.file("c.ph"), std::filesystem::copy_options::overwrite_existing);
    auto clean = PieceReader::Open(path, false, nullptr);
    ASSERT_TRUE(clean.ok());
    const SegmentIndex& seg = (*clean)->segments()[0];
    uint64_t b = rng() % seg.meta.num_blocks;
    uint64_t off = seg.BlockBegin(b) + rng() % (seg.BlockEnd(b) - seg.BlockBegin(b));
    FlipByte(dir.file("c.ph"), seg.meta.offset + off);
    auto r = PieceReader::Open(dir.file("c.ph"), false, nullptr);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ((*r)->ReadBlock(0, b, IoPurpose::kUser).status().code(), Code::kChecksumMismatch);
  }
}

TEST(PieceReader, CorruptIndexSectionsDetected) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(500, 9);
  Built b = WriteTestPiece(dir.file("p.ph"), recs, 2, 13, true);
  const PieceFooter& f = b.result.footer;
  struct Case {
    uint64_t offset;
    bool fails_open;
  } cases[] = {{f.segdir_offset + 3, true},
               {f.global_offset + f.global_len / 2, false},
               {f.samples_offset + 5, false},
               {f.locators_offset + 9, false}};
  for (const Case& c : cases) {
    std::filesystem::copy_file(dir.file("p.ph"), dir.file("c.ph"), std::filesystem::copy_options::overwrite_existing);
    FlipByte(dir.file("c.ph"), c.offset);
    auto r = PieceReader::Open(dir.file("c.ph"), false, nullptr);
    if (c.fails_open) {
      EXPECT_EQ(r.status().code(), Code::kChecksumMismatch);
      continue;
    }
    ASSERT_TRUE(r.ok());
    uint32_t interval;
    uint64_t count;
    bool any_bad = !(*r)->ReadGlobalIndex().ok() || !(*r)->ReadSamples(&interval, &count).ok() ||
                   !(*r)->ReadLocators().ok();
    EXPECT_TRUE(any_bad);
  }
}

TEST(PieceReader, TruncatedFile) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(100, 10);
  Built b = WriteTestPiece(dir.file("p.ph"), recs, 1, 13, false);
  std::filesystem::resize_file(dir.file("p.ph"), b.result.file_bytes - 10);
  EXPECT_FALSE(PieceReader::Open(dir.file("p.ph"), false, nullptr).ok());
  std::filesystem::resize_file(dir.file("p.ph"), 100);
  EXPECT_EQ(PieceReader::Open(dir.file("p.ph"), false, nullptr).status().code(), Code::kTruncatedFile);
}

TEST(PieceReader, MissingFile) {
  TempDir dir;
  EXPECT_EQ(PieceReader::Open(dir.file("absent.ph"), false, nullptr).status().code(), Code::kMissingPiece);
}

TEST(PieceReader, SegmentDecodesInIsolation) {
  // Copy one segment's bytes to a fresh file and decode it from its metadata alone.
  TempDir dir;
  std::vector<Record> recs = RandomRecords(4000, 11);
  Built b = WriteTestPiece(dir.file("p.ph"), recs, 4, 13, false);
  auto r = PieceReader::Open(dir.file("p.ph"), false, nullptr);
  ASSERT_TRUE(r.ok());
  std::string whole;
  ASSERT_TRUE(ReadWholeFile(dir.file("p.ph"), &whole, nullptr).ok());
  const SegmentMeta& m = (*r)->segments()[2].meta;
  std::string seg = whole.substr(m.offset, m.length);
  auto fn = cphash::PerfectHashFn::Deserialize(std::string_view(seg).substr(m.phf_offset, m.phf_len));
  ASSERT_TRUE(fn.ok());
  std::string_view table = std::string_view(seg).substr(m.table_offset, m.table_len - 4);
  for (const Record* rec : b.by_segment[2]) {
    uint64_t slot = fn->Evaluate(DigestKey(rec->key, kSeed).hash);
    SlotLocation loc = ResolveSlot(slot, m.block_k);
    uint32_t begin = DecodeFixed32(table.data() + 4 * loc.block);
    uint64_t end = loc.block + 1 < m.num_blocks ? DecodeFixed32(table.data() + 4 * (loc.block + 1)) : m.blocks_len;
    auto block = Block::Decode(seg.substr(begin, end - begin));
    ASSERT_TRUE(block.ok());
    EXPECT_EQ(block->entry(loc.entry)->key, rec->key);
  }
}

TEST(WritePiece, SegmentOverflow) {
  TempDir dir;
  std::vector<Record> recs = RandomRecords(1000, 12, 100);
  Built b = WriteTestPiece(dir.file("p.ph"), recs, 1, 13, false, nullptr, 50000);
  EXPECT_EQ(b.result.footer.key_count, ~uint64_t{0});
}

}  // namespace
}  // namespace tphkv::piece
