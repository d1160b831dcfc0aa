#pragma once

// Embedded key-value store: memtable + WAL in front of levels of TPHs.
//
// Directory layout:
//   LOCK
//   MANIFEST-<n>
//   wal/<gen>.log
//   tph/<tph_id>/<seq>.ph

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "tphkv/compaction.h"
#include "tphkv/io.h"
#include "tphkv/manifest.h"
#include "tphkv/memtable.h"
#include "tphkv/status.h"
#include "tphkv/tph.h"
#include "tphkv/wal.h"

namespace tphkv {

enum class EngineMode {
  kLeveledHashRange,  // L0 + hash-partitioned levels
  kOneLevel,          // memtables merge straight into L1
  kSingleTier,        // leveled, at most 2 pieces per TPH
};

enum class WalSyncPolicy { kPerWrite, kInterval, kNone };

std::string_view EngineModeName(EngineMode mode);
Result<EngineMode> ParseEngineMode(std::string_view name);

struct EngineConfig {
  std::string dir;
  EngineMode mode = EngineMode::kLeveledHashRange;
  uint64_t memtable_bytes = uint64_t{128} << 20;
  uint32_t max_memtables = 4;
  uint32_t levels = 6;
  uint32_t fanout = 2;
  uint32_t max_pieces = 0;  // 0: 16, or 2 in single-tier mode
  double scale_c = 1.1;
  uint32_t segment_count = 64;
  uint32_t sample_interval = 64;
  uint64_t page_size = 4096;
  bool direct_io = false;
  uint64_t hash_seed = 0x7470686b76ULL;  // used only when creating a store

  WalSyncPolicy wal_sync = WalSyncPolicy::kNone;
  uint32_t wal_sync_interval_ms = 100;

  uint32_t l0_trigger = 4;
  uint64_t level1_bytes = 0;  // 0: memtable_bytes * max_memtables
  double level_ratio = 10.0;
  double invalid_ratio = 0.5;
  uint64_t memory_cap_bytes = 0;  // resident index budget checked at open; 0 = none

  // Called at named points inside maintenance. Fault-injection tests use it.
  std::function<void(std::string_view point)> test_hook;

  uint32_t EffectiveMaxPieces() const;
  uint32_t EffectiveLevels() const;
  uint64_t EffectiveLevel1Bytes() const;
  Status Validate() const;
};

struct LevelSummary {
  uint32_t level = 0;
  uint32_t tphs = 0;
  uint64_t pieces = 0;
  uint32_t max_pieces_per_tph = 0;
  uint64_t live_keys = 0;
  uint64_t live_bytes = 0;
  uint64_t file_bytes = 0;
};

struct EngineSummary {
  std::vector<LevelSummary> levels;  // level 0 first
  uint64_t resident_index_bytes = 0;
  uint64_t indexed_keys = 0;
  uint64_t memtable_entries = 0;
  uint64_t manifest_version = 0;
};

class Engine;

// Ordered view over [start, end) merging memtables and TPHs; newest version
// wins, deleted keys are skipped. Sees writes made after creation only
// through the memtables.
class EngineIterator {
 public:
  ~EngineIterator();
  bool Valid() const { return valid_; }
  void SeekToFirst();
  // Positions at the first key >= max(target, start).
  void Seek(std::string_view target);
  void Next();
  std::string_view key() const { return key_; }
  std::string_view value() const { return value_; }
  Status status() const { return status_; }

  struct Source;  // one memtable or TPH input

 private:
  friend class Engine;
  EngineIterator(std::shared_ptr<const void> version, std::vector<std::unique_ptr<Source>> sources,
                 std::string start, std::string end, std::shared_ptr<IoStats> stats);
  void Rebuild();
  void AdvanceKey(const std::string& k);
  void Settle();

  std::shared_ptr<const void> version_;  // keeps TPHs alive
  std::vector<std::unique_ptr<Source>> sources_;
  std::vector<size_t> heap_;
  std::string start_, end_;
  std::shared_ptr<IoStats> stats_;
  bool valid_ = false;
  std::string key_, value_;
  Status status_;
};

class Engine {
 public:
  static Result<std::unique_ptr<Engine>> Open(const EngineConfig& config);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  Status Put(std::string_view key, std::string_view value);
  Status Delete(std::string_view key);
  // NotFound for absent or deleted keys.
  Status Get(std::string_view key, std::string* value);
  std::unique_ptr<EngineIterator> NewIterator(std::string_view start = {}, std::string_view end = {});

  // Moves every memtable write into TPHs and waits for maintenance to go idle.
  Status Flush();
  // Flush, then pushes all data to the bottom level.
  Status Compact();
  // Stops maintenance and releases the directory. Does not flush; the WAL
  // covers unflushed writes.
  Status Close();

  IoStatsSnapshot stats() const { return stats_->Snapshot(); }
  std::shared_ptr<IoStats> raw_stats() const { return stats_; }
  EngineSummary Summary() const;
  const EngineConfig& config() const { return config_; }
  uint64_t hash_seed() const { return hash_seed_; }

 private:
  struct Version;
  struct Edit;

  explicit Engine(const EngineConfig& config);

  Status Recover();
  Status RemoveOrphans();
  Status NewWal(std::shared_ptr<MemTable>* mem);
  Status Write(piece::ValueKind kind, std::string_view key, std::string_view value);
  Status MakeRoomLocked(std::unique_lock<std::mutex>& l);
  std::shared_ptr<const Version> current() const;

  void BackgroundLoop();
  bool HasWorkLocked() const;
  Status RunOneStep(bool* did_work);
  Status FlushImmutables(size_t count);
  Status CompactLevels(bool to_bottom, bool* did_work);
  Status MergeLevel0();
  Status PushDown(uint32_t level, uint64_t index);
  Status ApplyEdit(Edit& edit);

  Result<TphMeta> MergeInto(const std::shared_ptr<const Tph>& base, uint32_t level, uint64_t index,
                            std::span<const piece::Record> delta, bool bottom, Edit* edit);
  bool IsBottom(const Version& v, uint32_t level, uint64_t index) const;
  MergeOptions BaseMergeOptions() const;
  std::string TphPath(uint64_t tph_id) const;
  uint64_t LevelBudget(uint32_t level) const;
  void Hook(std::string_view point) const;

  const EngineConfig config_;
  const HashRangeLayout layout_;
  std::shared_ptr<IoStats> stats_;
  uint64_t hash_seed_ = 0;
  int lock_fd_ = -1;

  // Serializes writers.
  std::mutex write_mu_;
  std::unique_ptr<WalWriter> wal_;
  uint64_t last_sync_ms_ = 0;

  // Guards the fields below and version rotation.
  mutable std::mutex mu_;
  std::condition_variable bg_cv_;
  std::condition_variable done_cv_;
  ManifestState manifest_;
  std::atomic<uint64_t> last_sequence_{0};
  bool shutting_down_ = false;
  bool force_flush_ = false;
  bool compact_requested_ = false;
  bool bg_active_ = false;
  Status bg_error_;
  std::thread bg_thread_;

  // Readers copy this pointer under version_mu_ only.
  mutable std::mutex version_mu_;
  std::shared_ptr<const Version> version_;

  bool closed_ = false;
};

}  // namespace tphkv
