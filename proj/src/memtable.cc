#include "tphkv/memtable.h"

#include <mutex>

namespace tphkv {

void MemTable::Add(uint64_t seq, piece::ValueKind kind, std::string_view key, std::string_view value) {
  std::unique_lock<std::shared_mutex> l(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) {
    it = map_.emplace(std::string(key), Entry{}).first;
    bytes_ += key.size() + kEntryOverhead;
  } else {
    bytes_ -= it->second.value.size();
  }
  it->second.seq = seq;
  it->second.kind = kind;
  it->second.value.assign(kind == piece::ValueKind::kValue ? value : std::string_view());
  bytes_ += it->second.value.size();
}

LookupState MemTable::Get(std::string_view key, std::string* value) const {
  std::shared_lock<std::shared_mutex> l(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return LookupState::kNotFound;
  if (it->second.kind == piece::ValueKind::kTombstone) return LookupState::kDeleted;
  *value = it->second.value;
  return LookupState::kFound;
}

size_t MemTable::size() const {
  std::shared_lock<std::shared_mutex> l(mu_);
  return map_.size();
}

std::vector<piece::Record> MemTable::SortedRecords() const {
  std::shared_lock<std::shared_mutex> l(mu_);
  std::vector<piece::Record> out;
  out.reserve(map_.size());
  for (const auto& [k, e] : map_) out.push_back({k, e.kind, e.value});
  return out;
}

std::vector<std::pair<std::string, MemTable::Entry>> MemTable::Snapshot(std::string_view start,
                                                                       std::string_view end) const {
  std::shared_lock<std::shared_mutex> l(mu_);
  std::vector<std::pair<std::string, Entry>> out;
  for (auto it = map_.lower_bound(start); it != map_.end(); ++it) {
    if (!end.empty() && it->first >= end) break;
    out.emplace_back(it->first, it->second);
  }
  return out;
}

bool MemTable::SeekCopy(std::string_view target, bool inclusive, std::string* key, Entry* entry) const {
  std::shared_lock<std::shared_mutex> l(mu_);
  auto it = inclusive ? map_.lower_bound(target) : map_.upper_bound(target);
  if (it == map_.end()) return false;
  *key = it->first;
  *entry = it->second;
  return true;
}

}  // namespace tphkv
