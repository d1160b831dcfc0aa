#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "tphkv/status.h"

namespace tphkv {

struct IoStatsSnapshot {
  uint64_t user_bytes_written = 0;
  uint64_t disk_bytes_written = 0;
  uint64_t user_bytes_read = 0;
  uint64_t disk_bytes_read = 0;
  uint64_t block_reads = 0;
  uint64_t gets = 0;
  uint64_t puts = 0;
  uint64_t compaction_bytes_read = 0;
  uint64_t compaction_bytes_written = 0;

  // Quotients of the raw counters; 0 when the denominator is 0.
  double write_amplification() const {
    return user_bytes_written == 0 ? 0.0 : static_cast<double>(disk_bytes_written) / user_bytes_written;
  }
  double read_amplification() const {
    return user_bytes_read == 0 ? 0.0 : static_cast<double>(disk_bytes_read) / user_bytes_read;
  }
};

// Monotone engine-wide counters. Relaxed atomics: each counter is exact,
// cross-counter consistency is per snapshot call.
struct IoStats {
  std::atomic<uint64_t> user_bytes_written{0};
  std::atomic<uint64_t> disk_bytes_written{0};
  std::atomic<uint64_t> user_bytes_read{0};
  std::atomic<uint64_t> disk_bytes_read{0};
  std::atomic<uint64_t> block_reads{0};
  std::atomic<uint64_t> gets{0};
  std::atomic<uint64_t> puts{0};
  std::atomic<uint64_t> compaction_bytes_read{0};
  std::atomic<uint64_t> compaction_bytes_written{0};

  IoStatsSnapshot Snapshot() const;
};

enum class IoPurpose { kUser, kCompaction, kLoad };

inline void Bump(std::atomic<uint64_t>& c, uint64_t n) { c.fetch_add(n, std::memory_order_relaxed); }

// Positioned reads on an immutable file. Safe for concurrent readers.
class RandomAccessFile {
 public:
  static Result<std::unique_ptr<RandomAccessFile>> Open(const std::string& path, bool direct_io,
                                                        std::shared_ptr<IoStats> stats);
  ~RandomAccessFile();
  RandomAccessFile(const RandomAccessFile&) = delete;
  RandomAccessFile& operator=(const RandomAccessFile&) = delete;

  // One read syscall (one aligned read under direct I/O) of [offset, offset+n).
  Status Read(uint64_t offset, size_t n, std::string* out, IoPurpose purpose) const;

  uint64_t size() const { return size_; }
  const std::string& path() const { return path_; }
  uint64_t read_ops() const { return read_ops_.load(std::memory_order_relaxed); }

 private:
  RandomAccessFile(std::string path, int fd, uint64_t size, bool direct, std::shared_ptr<IoStats> stats)
      : path_(std::move(path)), fd_(fd), size_(size), direct_(direct), stats_(std::move(stats)) {}

  std::string path_;
  int fd_;
  uint64_t size_;
  bool direct_;
  std::shared_ptr<IoStats> stats_;
  mutable std::atomic<uint64_t> read_ops_{0};
};

enum class WritePurpose { kLog, kTable, kManifest };

// Append-only file. Under direct I/O, data is staged in an aligned buffer and
// written in whole pages; Close() pads the final page and truncates back.
class WritableFile {
 public:
  static Result<std::unique_ptr<WritableFile>> Create(const std::string& path, bool direct_io,
                                                      std::shared_ptr<IoStats> stats, WritePurpose purpose);
  ~WritableFile();
  WritableFile(const WritableFile&) = delete;
  WritableFile& operator=(const WritableFile&) = delete;

  Status Append(std::string_view data);
  Status Flush();
  Status Sync();
  // `sync` forces everything, including a padded direct-I/O tail, to disk.
  Status Close(bool sync = false);

  uint64_t size() const { return size_; }

 private:
  WritableFile(std::string path, int fd, bool direct, std::shared_ptr<IoStats> stats, WritePurpose purpose);
  Status WriteRaw(const char* data, size_t n);

  std::string path_;
  int fd_;
  bool direct_;
  std::shared_ptr<IoStats> stats_;
  WritePurpose purpose_;
  uint64_t size_ = 0;
  char* buf_ = nullptr;  // page-aligned staging buffer
  size_t buf_used_ = 0;
};

constexpr size_t kIoAlignment = 4096;

Status ReadWholeFile(const std::string& path, std::string* out, std::shared_ptr<IoStats> stats);
Status SyncDir(const std::string& dir);

}  // namespace tphkv
