#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tphkv/piece_format.h"
#include "tphkv/tph.h"

namespace tphkv {

// Ordered write buffer. Many readers, one writer.
class MemTable {
 public:
  struct Entry {
    uint64_t seq = 0;
    piece::ValueKind kind = piece::ValueKind::kValue;
    std::string value;
  };
  using Map = std::map<std::string, Entry, std::less<>>;

  explicit MemTable(uint64_t wal_gen) : wal_gen_(wal_gen) {}

  void Add(uint64_t seq, piece::ValueKind kind, std::string_view key, std::string_view value);
  LookupState Get(std::string_view key, std::string* value) const;

  size_t ApproximateBytes() const { return bytes_.load(std::memory_order_relaxed); }
  size_t size() const;
  bool empty() const { return size() == 0; }
  uint64_t wal_gen() const { return wal_gen_; }

  // Records in key order, tombstones included.
  std::vector<piece::Record> SortedRecords() const;
  // Copy of the entries in [start, end); empty `end` means unbounded.
  std::vector<std::pair<std::string, Entry>> Snapshot(std::string_view start, std::string_view end) const;
  // First entry with key >= target (> target when !inclusive). Copies it out
  // so callers can step while writers keep inserting.
  bool SeekCopy(std::string_view target, bool inclusive, std::string* key, Entry* entry) const;

 private:
  static constexpr size_t kEntryOverhead = 32;

  const uint64_t wal_gen_;
  mutable std::shared_mutex mu_;
  Map map_;
  std::atomic<size_t> bytes_{0};
};

}  // namespace tphkv
