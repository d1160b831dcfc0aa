// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance_test          all criteria
//   acceptance_test 7 9      selected criteria

#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "tph_fixture.h"
#include "tphkv/bench.h"
#include "tphkv/cphash.h"
#include "tphkv/engine.h"

namespace tphkv {
namespace {

namespace fs = std::filesystem;
using piece::Record;
using piece::ValueKind;
using testing::KeyOf;
using testing::TempDir;
using testing::TphFixture;
using testing::ValueOf;
using testing::ValueRecords;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Detail {
 public:
  template <typename T>
  Detail& operator<<(const T& v) {
    os_ << v;
    return *this;
  }
  std::string str() const { return os_.str(); }

 private:
  std::ostringstream os_;
};

double Seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<uint64_t> RandomDistinct(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::unordered_set<uint64_t> seen;
  seen.reserve(n * 2);
  std::vector<uint64_t> out;
  out.reserve(n);
  while (out.size() < n) {
    uint64_t v = rng();
    if (seen.insert(v).second) out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1 and 2: CPHash builds.

struct BuildRecord {
  uint64_t n = 0;
  uint64_t table_size = 0;
  uint32_t growth_steps = 0;
};

struct HashRuns {
  bool all_built = true;
  uint64_t collisions = 0;
  uint64_t out_of_range = 0;
  double seconds = 0;
  std::vector<BuildRecord> builds;
  std::string first_error;
};

const HashRuns& RunHashBuilds() {
  static std::optional<HashRuns> runs;
  if (runs) return *runs;
  runs.emplace();
  auto t0 = std::chrono::steady_clock::now();
  const uint64_t sizes[] = {10, 1000, 100000, 1000000};
  for (uint64_t n : sizes) {
    for (uint64_t rep = 0; rep < 25; ++rep) {
      uint64_t seed = n * 1000 + rep;
      std::vector<uint64_t> keys = RandomDistinct(n, seed);
      cphash::BuildStats st;
      auto f = cphash::PerfectHashFn::Build(keys, seed ^ 0x5eed, cphash::CpHashConfig{}, &st);
      if (!f.ok()) {
        runs->all_built = false;
        if (runs->first_error.empty()) runs->first_error = f.status().ToString();
        continue;
      }
      std::vector<bool> used(f->table_size(), false);
      for (uint64_t k : keys) {
        uint64_t s = f->Evaluate(k);
        if (s >= f->table_size()) {
          ++runs->out_of_range;
        } else if (used[s]) {
          ++runs->collisions;
        } else {
          used[s] = true;
        }
      }
      runs->builds.push_back({n, f->table_size(), st.growth_steps});
    }
  }
  runs->seconds = Seconds(t0);
  return *runs;
}

Outcome PerfectHashCorrectness() {
  const HashRuns& r = RunHashBuilds();
  Outcome o;
  o.pass = r.all_built && r.builds.size() == 100 && r.collisions == 0 && r.out_of_range == 0 && r.seconds < 120;
  o.detail = (Detail() << r.builds.size() << "/100 builds over sizes {10,1e3,1e5,1e6}, " << r.collisions
                       << " collisions, " << r.out_of_range << " out of range, " << r.seconds << " s"
                       << (r.first_error.empty() ? "" : ", error: " + r.first_error))
                 .str();
  return o;
}

Outcome LoadFactor() {
  const HashRuns& r = RunHashBuilds();
  double min_lf = 1.0;
  uint64_t grown = 0, checked = 0;
  for (const BuildRecord& b : r.builds) {
    if (b.growth_steps > 0) {
      ++grown;
      continue;
    }
    ++checked;
    min_lf = std::min(min_lf, static_cast<double>(b.n) / b.table_size);
  }
  double growth_freq = r.builds.empty() ? 1.0 : static_cast<double>(grown) / r.builds.size();
  Outcome o;
  o.pass = checked > 0 && min_lf >= 0.90 && growth_freq < 0.05;
  o.detail = (Detail() << "min N/table_size " << min_lf << " over " << checked << " builds without growth; growth-step "
                       << "frequency " << grown << "/" << r.builds.size() << " = " << growth_freq * 100 << "%")
                 .str();
  return o;
}

// ---------------------------------------------------------------------------
// 3 and 4: one loaded TPH.

TphFixture& LoadedTph() {
  static TphFixture* f = [] {
    auto* fx = new TphFixture(7);
    // Two pieces, the second overwriting part of the first.
    if (!fx->Merge(ValueRecords(0, 60000, 1, 100)).ok()) std::abort();
    std::vector<Record> second = ValueRecords(60000, 100000, 1, 100);
    for (auto& r : ValueRecords(0, 20000, 2, 100)) second.push_back(r);
    if (!fx->Merge(second).ok()) std::abort();
    return fx;
  }();
  return *f;
}

Outcome SignatureFilter() {
  TphFixture& f = LoadedTph();
  const Tph& t = *f.tph();
  const uint64_t probes = 1000000;
  uint64_t passed = 0;
  for (uint64_t i = 0; i < probes; ++i) {
    std::string key = "absent:" + std::to_string(i * 7919);
    passed += t.ProbeIndex(DigestKey(key, t.hash_seed()).hash).signature_match;
  }
  double rate = static_cast<double>(passed) / probes;
  double target = 1.0 / 255;
  Outcome o;
  o.pass = std::abs(rate - target) <= 0.2 * target;
  o.detail = (Detail() << passed << "/" << probes << " absent probes passed the signature check = " << rate * 100
                       << "% (target " << target * 100 << "% +/-20% relative)")
                 .str();
  return o;
}

Outcome SingleReadLookups() {
  TphFixture& f = LoadedTph();
  const Tph& t = *f.tph();
  IoStats& st = f.stats();
  uint64_t violations = 0, present = 0, rejected = 0, wrong = 0;
  for (uint64_t i = 0; i < 100000; ++i) {
    std::string key = KeyOf(i);
    LookupState state;
    std::string v;
    uint64_t before = st.block_reads.load();
    Status s = t.Get(key, &state, &v);
    violations += st.block_reads.load() - before != 1;
    wrong += !s.ok() || state != LookupState::kFound || v != ValueOf(i, i < 20000 ? 2 : 1, 100);
    ++present;
  }
  for (uint64_t i = 0; rejected < 100000; ++i) {
    std::string key = "missing:" + std::to_string(i);
    KeyDigest d = DigestKey(key, t.hash_seed());
    if (t.ProbeIndex(d.hash).signature_match) continue;
    LookupState state;
    std::string v;
    uint64_t before = st.block_reads.load();
    Status s = t.Get(key, d, &state, &v);
    violations += st.block_reads.load() - before != 0;
    wrong += !s.ok() || state != LookupState::kNotFound;
    ++rejected;
  }
  Outcome o;
  o.pass = violations == 0 && wrong == 0;
  o.detail = (Detail() << present << " present gets at exactly 1 block read, " << rejected
                       << " signature-rejected absent gets at 0 reads; " << violations << " violations, " << wrong
                       << " wrong answers")
                 .str();
  return o;
}

// ---------------------------------------------------------------------------
// 5: index memory at defaults.

Outcome IndexMemoryBudget() {
  auto t0 = std::chrono::steady_clock::now();
  TempDir dir;
  auto stats = std::make_shared<IoStats>();
  MergeOptions opts;  // defaults: 64 segments, sample interval 64, 4 KiB pages, 16 pieces
  opts.tph_dir = dir.file("tph");
  opts.tph_id = 1;
  opts.level = 1;
  opts.hash_seed = 99;
  opts.bottom = true;
  opts.stats = stats;
  std::shared_ptr<const Tph> tph;
  const uint64_t per_merge = 1000000;
  for (uint64_t m = 0; m < 5; ++m) {
    std::vector<Record> delta;
    delta.reserve(per_merge);
    for (uint64_t i = m * per_merge; i < (m + 1) * per_merge; ++i) {
      delta.push_back({KeyOf(i), ValueKind::kValue, ValueOf(i, 1, 300)});
    }
    opts.new_piece_seq = m + 1;
    auto r = MergeIntoTph(tph.get(), delta, opts);
    if (!r.ok()) return {false, "merge failed: " + r.status().ToString()};
    tph.reset();
    auto loaded = Tph::Load(r->meta, opts.tph_dir, opts.hash_seed, false, stats);
    if (!loaded.ok()) return {false, "load failed: " + loaded.status().ToString()};
    tph = *loaded;
  }
  uint64_t keys = tph->meta().live_keys;
  double per_key = static_cast<double>(tph->ResidentBytes()) / keys;
  double secs = Seconds(t0);
  Outcome o;
  o.pass = keys == 5 * per_merge && per_key <= 8.0 && secs < 600;
  o.detail = (Detail() << per_key << " resident index bytes per live key over " << keys
                       << " keys (limit 8.0, arithmetic target 6.51), " << tph->pieces().size() << " pieces, " << secs
                       << " s")
                 .str();
  return o;
}

// ---------------------------------------------------------------------------
// 6: delta-only compaction.

struct FileId {
  dev_t dev;
  ino_t ino;
  off_t size;
  timespec mtime;
  bool operator==(const FileId& o) const {
    return dev == o.dev && ino == o.ino && size == o.size && mtime.tv_sec == o.mtime.tv_sec &&
           mtime.tv_nsec == o.mtime.tv_nsec;
  }
};

FileId Identify(const std::string& path) {
  struct stat st{};
  ::stat(path.c_str(), &st);
  return {st.st_dev, st.st_ino, st.st_size, st.st_mtim};
}

Outcome DeltaOnlyCompaction() {
  TphFixture f(11);
  if (!f.Merge(ValueRecords(0, 100000, 1, 100)).ok()) return {false, "base build failed"};
  const uint64_t base_seq = f.tph()->meta().piece_seqs.at(0);
  const std::string base_path = f.tph_dir() + "/" + PieceFileName(base_seq);
  const FileId before = Identify(base_path);

  // 5k overwrites of base keys and 5k new keys.
  std::mt19937_64 rng(6);
  std::map<std::string, Record> delta_map;
  while (delta_map.size() < 5000) {
    uint64_t i = rng() % 100000;
    delta_map[KeyOf(i)] = {KeyOf(i), ValueKind::kValue, ValueOf(i, 2, 100)};
  }
  for (uint64_t i = 100000; i < 105000; ++i) delta_map[KeyOf(i)] = {KeyOf(i), ValueKind::kValue, ValueOf(i, 2, 100)};
  std::vector<Record> delta;
  uint64_t delta_bytes = 0;
  for (auto& [k, r] : delta_map) {
    delta_bytes += r.payload_bytes();
    delta.push_back(r);
  }
  // Piece position of every base key before the merge.
  std::vector<uint32_t> piece_before(100000);
  for (uint64_t i = 0; i < 100000; ++i) {
    piece_before[i] = f.tph()->ProbeIndex(DigestKey(KeyOf(i), f.hash_seed()).hash).piece;
  }

  auto r = f.Merge(delta);
  if (!r.ok()) return {false, "merge failed: " + r.status().ToString()};
  const MergeStats& st = r->stats;
  uint64_t moved = 0, wrong = 0;
  for (uint64_t i = 0; i < 105000; ++i) {
    std::string key = KeyOf(i);
    bool in_delta = delta_map.count(key) > 0;
    if (i < 100000 && !in_delta) {
      moved += f.tph()->ProbeIndex(DigestKey(key, f.hash_seed()).hash).piece != piece_before[i];
    }
    wrong += f.Lookup(key) != ValueOf(i, in_delta ? 2 : 1, 100);
  }
  const bool file_same = fs::exists(base_path) && Identify(base_path) == before;
  const double limit = 1.25 * delta_bytes + st.index_bytes;
  Outcome o;
  o.pass = st.gc_marked_pieces == 0 && st.kv_bytes_written == delta_bytes && st.piece_bytes <= limit && moved == 0 &&
           wrong == 0 && file_same;
  o.detail = (Detail() << "delta " << delta_bytes << " B; new piece " << st.piece_bytes << " B (kv payload "
                       << st.kv_bytes_written << " B, index sections " << st.index_bytes << " B, limit " << limit
                       << " B); " << moved << " unchanged entries moved, base file "
                       << (file_same ? "untouched" : "CHANGED") << ", " << wrong << " wrong lookups")
                 .str();
  return o;
}

// ---------------------------------------------------------------------------
// 7: mode A/B directions.

EngineConfig AbEngine(EngineMode mode, uint32_t fanout) {
  EngineConfig c;
  c.mode = mode;
  c.fanout = fanout;
  c.memtable_bytes = 4 << 20;
  c.max_memtables = 4;
  return c;
}

Result<bench::BenchReport> AbRun(const bench::WorkloadSpec& spec, EngineConfig c, const std::string& dir) {
  c.dir = dir;
  return bench::Run(spec, c);
}

Outcome ModeDirections() {
  auto t0 = std::chrono::steady_clock::now();
  TempDir dir;
  bench::WorkloadSpec base;
  base.num_keys = 1000000;
  base.value_size = 100;
  base.seed = 42;

  bench::WorkloadSpec mixed = base;
  mixed.name = "mixed";
  mixed.read_fraction = 0.9;
  auto a_one = AbRun(mixed, AbEngine(EngineMode::kOneLevel, 2), dir.file("a-one"));
  auto a_lev = AbRun(mixed, AbEngine(EngineMode::kLeveledHashRange, 2), dir.file("a-lev"));

  bench::WorkloadSpec fill = base;
  fill.name = "fillrandom";
  auto b_f2 = AbRun(fill, AbEngine(EngineMode::kLeveledHashRange, 2), dir.file("b-f2"));
  auto b_f1 = AbRun(fill, AbEngine(EngineMode::kLeveledHashRange, 1), dir.file("b-f1"));

  bench::WorkloadSpec over = base;
  over.name = "overwrite";
  over.overwrite_rounds = 10;
  auto c_st = AbRun(over, AbEngine(EngineMode::kSingleTier, 2), dir.file("c-st"));
  auto c_lev = AbRun(over, AbEngine(EngineMode::kLeveledHashRange, 2), dir.file("c-lev"));

  for (const auto* r : {&a_one, &a_lev, &b_f2, &b_f1, &c_st, &c_lev}) {
    if (!r->ok()) return {false, "run failed: " + r->status().ToString()};
  }
  const bool a = a_one->wa < a_lev->wa;
  const double rd2 = b_f2->io.compaction_bytes_read / 1048576.0, rd1 = b_f1->io.compaction_bytes_read / 1048576.0;
  const bool b = b_f2->io.compaction_bytes_read < b_f1->io.compaction_bytes_read;
  const bool c = c_st->ra < c_lev->ra;
  Outcome o;
  o.pass = a && b && c;
  o.detail = (Detail() << "(a) " << (a ? "ok" : "FAIL") << " wa one_level " << a_one->wa << " vs leveled "
                       << a_lev->wa << "; (b) " << (b ? "ok" : "FAIL") << " compaction read fanout-2 " << rd2
                       << " MiB vs fanout-1 " << rd1 << " MiB (" << (rd1 > 0 ? (1 - rd2 / rd1) * 100 : 0)
                       << "% less); (c) " << (c ? "ok" : "FAIL") << " ra single_tier " << c_st->ra << " vs leveled "
                       << c_lev->ra << "; " << Seconds(t0) << " s")
                 .str();
  return o;
}

// ---------------------------------------------------------------------------
// 8 and 10: randomized oracle run with kills.

constexpr uint64_t kOracleOps = 100000;
constexpr uint64_t kOracleKeys = 5000;

enum class OracleKind { kPut, kDelete, kScan };

struct OracleOp {
  OracleKind kind;
  std::string key;
  std::string value;
  uint32_t scan_len = 0;
};

std::string OracleKey(uint64_t i) { return "ok" + std::to_string(i * 2654435761ULL % 1000003); }

// Deterministic op i of the sequence.
std::vector<OracleOp> OracleOps() {
  std::mt19937_64 rng(20260);
  std::vector<OracleOp> ops;
  ops.reserve(kOracleOps);
  for (uint64_t i = 0; i < kOracleOps; ++i) {
    OracleOp op;
    uint64_t r = rng() % 100;
    op.key = OracleKey(rng() % kOracleKeys);
    if (r < 65) {
      op.kind = OracleKind::kPut;
      op.value = std::string(rng() % 300, static_cast<char>('a' + rng() % 26)) + std::to_string(i);
    } else if (r < 85) {
      op.kind = OracleKind::kDelete;
    } else {
      op.kind = OracleKind::kScan;
      op.scan_len = 1 + rng() % 50;
    }
    ops.push_back(std::move(op));
  }
  return ops;
}

bool IsFlushPoint(uint64_t i) { return i > 0 && i % 16000 == 0 && i <= 80000; }        // 5
bool IsCompactPoint(uint64_t i) { return i % 16000 == 8000 && i <= 72000; }           // 5
constexpr uint64_t kKillPoints[] = {25000, 50000, 75000};                              // 3

EngineConfig OracleEngine(const std::string& dir) {
  EngineConfig c;
  c.dir = dir;
  c.memtable_bytes = 64 << 10;
  c.max_memtables = 3;
  c.levels = 4;
  c.fanout = 2;
  c.segment_count = 4;
  c.l0_trigger = 3;
  c.wal_sync = WalSyncPolicy::kPerWrite;
  return c;
}

using Shadow = std::map<std::string, std::string>;

void ApplyToShadow(const OracleOp& op, Shadow* shadow) {
  if (op.kind == OracleKind::kPut) (*shadow)[op.key] = op.value;
  if (op.kind == OracleKind::kDelete) shadow->erase(op.key);
}

// Runs ops [begin, end) against `e`; returns a description of the first
// divergence or error.
std::string RunOracleOps(Engine& e, const std::vector<OracleOp>& ops, uint64_t begin, uint64_t end, Shadow* shadow,
                         uint64_t* flushes, uint64_t* compactions) {
  for (uint64_t i = begin; i < end; ++i) {
    if (IsFlushPoint(i)) {
      if (Status s = e.Flush(); !s.ok()) return "flush: " + s.ToString();
      ++*flushes;
    }
    if (IsCompactPoint(i)) {
      if (Status s = e.Compact(); !s.ok()) return "compact: " + s.ToString();
      ++*compactions;
    }
    const OracleOp& op = ops[i];
    Status s;
    if (op.kind == OracleKind::kPut) {
      s = e.Put(op.key, op.value);
    } else if (op.kind == OracleKind::kDelete) {
      s = e.Delete(op.key);
    } else {
      auto it = e.NewIterator(op.key);
      auto want = shadow->lower_bound(op.key);
      uint32_t n = 0;
      for (it->SeekToFirst(); n < op.scan_len && want != shadow->end(); ++n, ++want, it->Next()) {
        if (!it->Valid() || it->key() != want->first || it->value() != want->second) {
          return "scan at op " + std::to_string(i) + " diverges at " + want->first;
        }
      }
      if (n < op.scan_len && it->Valid()) return "scan at op " + std::to_string(i) + " yields extra key";
      s = it->status();
    }
    if (!s.ok()) return "op " + std::to_string(i) + ": " + s.ToString();
    ApplyToShadow(op, shadow);
  }
  return "";
}

std::string CheckAgainstShadow(Engine& e, const Shadow& shadow) {
  std::string v;
  for (uint64_t k = 0; k < kOracleKeys; ++k) {
    std::string key = OracleKey(k);
    Status s = e.Get(key, &v);
    auto it = shadow.find(key);
    if (it == shadow.end()) {
      if (!s.IsNotFound()) return "get " + key + " should be absent: " + s.ToString();
    } else if (!s.ok() || v != it->second) {
      return "get " + key + " diverges: " + s.ToString();
    }
  }
  auto it = e.NewIterator();
  auto want = shadow.begin();
  for (it->SeekToFirst(); it->Valid(); it->Next(), ++want) {
    if (want == shadow.end()) return "scan yields extra key " + std::string(it->key());
    if (it->key() != want->first || it->value() != want->second) return "scan diverges at " + want->first;
  }
  if (!it->status().ok()) return "scan: " + it->status().ToString();
  if (want != shadow.end()) return "scan misses " + want->first;
  return "";
}

struct OracleState {
  std::unique_ptr<TempDir> dir;
  Shadow shadow;
  std::string error;
  uint64_t flushes = 0, compactions = 0, kills = 0, checks = 0;
};

OracleState& OracleRun() {
  static std::optional<OracleState> state;
  if (state) return *state;
  state.emplace();
  OracleState& st = *state;
  st.dir = std::make_unique<TempDir>();
  const std::string db = st.dir->file("db");
  const std::vector<OracleOp> ops = OracleOps();
  std::cout.flush();

  uint64_t begin = 0;
  for (uint64_t kill_at : kKillPoints) {
    pid_t pid = fork();
    if (pid == 0) {
      // Child: run its segment, then die without closing.
      Shadow shadow = st.shadow;
      uint64_t f = 0, c = 0;
      auto e = Engine::Open(OracleEngine(db));
      if (!e.ok()) _exit(3);
      std::string err = RunOracleOps(**e, ops, begin, kill_at, &shadow, &f, &c);
      if (!err.empty()) {
        std::fprintf(stderr, "child: %s\n", err.c_str());
        _exit(3);
      }
      ::kill(::getpid(), SIGKILL);
      _exit(4);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (!WIFSIGNALED(status) || WTERMSIG(status) != SIGKILL) {
      st.error = "child for ops [" + std::to_string(begin) + ", " + std::to_string(kill_at) + ") did not end by kill";
      return st;
    }
    ++st.kills;
    // Mirror the child's bookkeeping in the parent.
    for (uint64_t i = begin; i < kill_at; ++i) {
      st.flushes += IsFlushPoint(i);
      st.compactions += IsCompactPoint(i);
      ApplyToShadow(ops[i], &st.shadow);
    }
    begin = kill_at;
    auto e = Engine::Open(OracleEngine(db));
    if (!e.ok()) {
      st.error = "reopen after kill: " + e.status().ToString();
      return st;
    }
    st.error = CheckAgainstShadow(**e, st.shadow);
    ++st.checks;
    if (!st.error.empty()) {
      st.error = "after kill " + std::to_string(st.kills) + ": " + st.error;
      return st;
    }
    if (Status s = (*e)->Close(); !s.ok()) {
      st.error = "close: " + s.ToString();
      return st;
    }
  }
  auto e = Engine::Open(OracleEngine(db));
  if (!e.ok()) {
    st.error = "final open: " + e.status().ToString();
    return st;
  }
  st.error = RunOracleOps(**e, ops, begin, kOracleOps, &st.shadow, &st.flushes, &st.compactions);
  if (st.error.empty()) {
    st.error = CheckAgainstShadow(**e, st.shadow);
    ++st.checks;
  }
  if (Status s = (*e)->Close(); !s.ok() && st.error.empty()) st.error = "close: " + s.ToString();
  return st;
}

Outcome OracleEquivalence() {
  auto t0 = std::chrono::steady_clock::now();
  OracleState& st = OracleRun();
  Outcome o;
  o.pass = st.error.empty() && st.flushes == 5 && st.compactions == 5 && st.kills == 3;
  o.detail = (Detail() << kOracleOps << " ops, " << st.flushes << " flushes, " << st.compactions << " compactions, "
                       << st.kills << " kill/reopen cycles, " << st.checks << " full per-key + scan checks, "
                       << st.shadow.size() << " live keys at end"
                       << (st.error.empty() ? ", zero divergence" : "; divergence: " + st.error) << "; "
                       << Seconds(t0) << " s")
                 .str();
  return o;
}

Outcome ScanOrder() {
  OracleState& st = OracleRun();
  if (!st.error.empty()) return {false, "oracle sequence failed: " + st.error};
  auto e = Engine::Open(OracleEngine(st.dir->file("db")));
  if (!e.ok()) return {false, "open: " + e.status().ToString()};
  uint64_t order_violations = 0, dead = 0, yielded = 0;
  std::string prev;
  auto it = (*e)->NewIterator();
  for (it->SeekToFirst(); it->Valid(); it->Next(), ++yielded) {
    std::string k(it->key());
    if (yielded > 0 && !(prev < k)) ++order_violations;
    if (!st.shadow.count(k)) ++dead;
    prev = std::move(k);
  }
  std::mt19937_64 rng(77);
  uint64_t seek_errors = 0;
  auto sk = (*e)->NewIterator();
  for (int n = 0; n < 10000; ++n) {
    std::string start;
    switch (rng() % 3) {
      case 0:
        start = OracleKey(rng() % kOracleKeys);
        break;
      case 1:
        start = OracleKey(rng() % kOracleKeys) + static_cast<char>(rng() % 256);
        break;
      default:
        start = "ok" + std::to_string(rng() % 1100000);
        break;
    }
    sk->Seek(start);
    auto want = st.shadow.lower_bound(start);
    bool ok = want == st.shadow.end() ? !sk->Valid() : sk->Valid() && sk->key() == want->first;
    seek_errors += !ok;
  }
  Status closed = (*e)->Close();
  Outcome o;
  o.pass = closed.ok() && it->status().ok() && order_violations == 0 && dead == 0 && yielded == st.shadow.size() && seek_errors == 0;
  o.detail = (Detail() << yielded << " keys scanned, " << order_violations << " order violations, " << dead
                       << " deleted keys yielded; 10000 random seeks, " << seek_errors << " wrong successors")
                 .str();
  return o;
}

// ---------------------------------------------------------------------------
// 9: GC bound.

uint64_t DiskUsage(const std::string& dir) {
  uint64_t total = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) total += e.file_size();
  }
  return total;
}

Outcome GcBound() {
  std::string detail;
  bool pass = true;
  for (EngineMode mode : {EngineMode::kLeveledHashRange, EngineMode::kOneLevel}) {
    TempDir dir;
    EngineConfig c;
    c.dir = dir.file("db");
    c.mode = mode;
    c.max_pieces = 16;
    c.memtable_bytes = 4 << 20;  // one round fits one memtable
    c.segment_count = 8;
    auto e = Engine::Open(c);
    if (!e.ok()) return {false, e.status().ToString()};
    uint32_t worst = 0;
    std::vector<uint64_t> usage;
    std::string err;
    // Shuffled rounds flushed every 100 puts leave pieces partly live, so the
    // piece cap and stale-share GC both come into play.
    std::vector<uint64_t> order(1000);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(9);
    for (uint32_t round = 0; round < 100 && err.empty(); ++round) {
      std::shuffle(order.begin(), order.end(), rng);
      for (size_t n = 0; n < order.size() && err.empty(); ++n) {
        uint64_t k = order[n];
        if (Status s = (*e)->Put(KeyOf(k), ValueOf(k, round, 200)); !s.ok()) err = s.ToString();
        if (n % 100 != 99) continue;
        if (Status s = (*e)->Flush(); !s.ok()) err = s.ToString();
        for (const LevelSummary& l : (*e)->Summary().levels) worst = std::max(worst, l.max_pieces_per_tph);
      }
      usage.push_back(DiskUsage(c.dir));
    }
    std::string v;
    uint64_t wrong = 0;
    for (uint64_t k = 0; k < 1000 && err.empty(); ++k) wrong += !(*e)->Get(KeyOf(k), &v).ok() || v != ValueOf(k, 99, 200);
    if (Status s = (*e)->Close(); !s.ok() && err.empty()) err = s.ToString();
    if (!err.empty()) return {false, err};
    uint64_t peak = *std::max_element(usage.begin(), usage.end());
    auto mean = [&](size_t from, size_t to) {
      double s = 0;
      for (size_t i = from; i < to; ++i) s += usage[i];
      return s / (to - from);
    };
    // Stable: the last quarter does not grow past the second quarter.
    double early = mean(25, 50), late = mean(75, 100);
    bool stable = late <= 1.25 * early;
    bool ok = worst <= 16 && stable && wrong == 0;
    pass = pass && ok;
    detail += (Detail() << (detail.empty() ? "" : "; ") << EngineModeName(mode) << ": max " << worst
                        << " live pieces per TPH, disk final/peak " << static_cast<double>(usage.back()) / peak
                        << " (peak " << peak << " B), rounds 76-100 vs 26-50 mean " << late / early << ", " << wrong
                        << " wrong values")
                  .str();
  }
  return {pass, detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace tphkv

int main(int argc, char** argv) {
  using namespace tphkv;
  const std::vector<Criterion> all = {
      {1, "perfect-hash correctness", PerfectHashCorrectness},
      {2, "load factor", LoadFactor},
      {3, "signature filter", SignatureFilter},
      {4, "single-read lookups", SingleReadLookups},
      {5, "index memory budget", IndexMemoryBudget},
      {6, "delta-only compaction", DeltaOnlyCompaction},
      {7, "mode A/B directions", ModeDirections},
      {8, "oracle equivalence and durability", OracleEquivalence},
      {9, "GC bound", GcBound},
      {10, "scan order", ScanOrder},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const Criterion& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o = c.run();
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
