#pragma once

// Write-ahead log: one file per memtable generation. Record framing:
//   u32 crc32c(len | payload) | u32 len | payload
// payload: u64 seq | u8 kind | varint key len | key | varint value len | value

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "tphkv/io.h"
#include "tphkv/piece_format.h"
#include "tphkv/status.h"

namespace tphkv {

class WalWriter {
 public:
  static Result<std::unique_ptr<WalWriter>> Create(const std::string& path, std::shared_ptr<IoStats> stats);

  // The record reaches the OS before returning; `sync` also forces it to disk.
  Status Add(uint64_t seq, piece::ValueKind kind, std::string_view key, std::string_view value, bool sync);
  Status Sync() { return file_->Sync(); }
  Status Close() { return file_->Close(); }

 private:
  explicit WalWriter(std::unique_ptr<WritableFile> f) : file_(std::move(f)) {}
  std::unique_ptr<WritableFile> file_;
  std::string buf_;
};

using WalVisitor = std::function<void(uint64_t seq, piece::ValueKind kind, std::string_view key,
                                      std::string_view value)>;

// Replays every intact record. A torn or corrupt final record is ignored;
// corruption followed by further data is a WalReplayError.
Status ReplayWal(const std::string& path, std::shared_ptr<IoStats> stats, const WalVisitor& visit);

}  // namespace tphkv
