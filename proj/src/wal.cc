#include "tphkv/wal.h"

#include "tphkv/coding.h"
#include "tphkv/crc32c.h"

namespace tphkv {

Result<std::unique_ptr<WalWriter>> WalWriter::Create(const std::string& path, std::shared_ptr<IoStats> stats) {
  TPHKV_ASSIGN_OR_RETURN(auto f, WritableFile::Create(path, false, std::move(stats), WritePurpose::kLog));
  return std::unique_ptr<WalWriter>(new WalWriter(std::move(f)));
}

Status WalWriter::Add(uint64_t seq, piece::ValueKind kind, std::string_view key, std::string_view value, bool sync) {
  std::string payload;
  PutFixed64(&payload, seq);
  payload.push_back(static_cast<char>(kind));
  PutLengthPrefixed(&payload, key);
  PutLengthPrefixed(&payload, value);
  buf_.clear();
  char len[4];
  EncodeFixed32(len, static_cast<uint32_t>(payload.size()));
  uint32_t crc = crc32c::Extend(crc32c::Value(len, 4), payload.data(), payload.size());
  PutFixed32(&buf_, crc);
  buf_.append(len, 4);
  buf_ += payload;
  TPHKV_RETURN_IF_ERROR(file_->Append(buf_));
  TPHKV_RETURN_IF_ERROR(file_->Flush());
  if (sync) return file_->Sync();
  return Status::OK();
}

Status ReplayWal(const std::string& path, std::shared_ptr<IoStats> stats, const WalVisitor& visit) {
  std::string data;
  TPHKV_RETURN_IF_ERROR(ReadWholeFile(path, &data, std::move(stats)));
  std::string_view in(data);
  while (!in.empty()) {
    if (in.size() < 8) return Status::OK();  // torn header
    uint32_t crc = DecodeFixed32(in.data());
    uint32_t len = DecodeFixed32(in.data() + 4);
    if (in.size() - 8 < len) return Status::OK();  // torn payload
    std::string_view payload = in.substr(8, len);
    bool last = in.size() - 8 == len;
    if (crc32c::Extend(crc32c::Value(in.data() + 4, 4), payload.data(), payload.size()) != crc) {
      if (last) return Status::OK();
      return Status(Code::kWalReplayError, "corrupt record in " + path);
    }
    Decoder dec(payload);
    uint64_t seq = dec.U64();
    uint8_t kind = dec.U8();
    std::string_view key = dec.LengthPrefixed();
    std::string_view value = dec.LengthPrefixed();
    if (!dec.ok() || dec.remaining() != 0 || kind > 1) {
      return Status(Code::kWalReplayError, "malformed record in " + path);
    }
    visit(seq, static_cast<piece::ValueKind>(kind), key, value);
    in.remove_prefix(8 + len);
  }
  return Status::OK();
}

}  // namespace tphkv
