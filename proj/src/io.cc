#include "tphkv/io.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

namespace tphkv {
namespace {

constexpr size_t kStagingBytes = 1 << 20;

Status Errno(const std::string& what, const std::string& path) {
  return Status::IoError(what + " " + path + ": " + std::strerror(errno));
}

}  // namespace

IoStatsSnapshot IoStats::Snapshot() const {
  IoStatsSnapshot s;
  s.user_bytes_written = user_bytes_written.load(std::memory_order_relaxed);
  s.disk_bytes_written = disk_bytes_written.load(std::memory_order_relaxed);
  s.user_bytes_read = user_bytes_read.load(std::memory_order_relaxed);
  s.disk_bytes_read = disk_bytes_read.load(std::memory_order_relaxed);
  s.block_reads = block_reads.load(std::memory_order_relaxed);
  s.gets = gets.load(std::memory_order_relaxed);
  s.puts = puts.load(std::memory_order_relaxed);
  s.compaction_bytes_read = compaction_bytes_read.load(std::memory_order_relaxed);
  s.compaction_bytes_written = compaction_bytes_written.load(std::memory_order_relaxed);
  return s;
}

Result<std::unique_ptr<RandomAccessFile>> RandomAccessFile::Open(const std::string& path, bool direct_io,
                                                                 std::shared_ptr<IoStats> stats) {
  int fd = -1;
  bool direct = false;
  if (direct_io) {
    fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC | O_DIRECT);
    direct = fd >= 0;
  }
  if (fd < 0) fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    if (errno == ENOENT) return Status(Code::kMissingPiece, "missing file " + path);
    return Errno("open", path);
  }
  struct stat st;
  if (::fstat(fd, &st) != 0) {
    Status s = Errno("fstat", path);
    ::close(fd);
    return s;
  }
  return std::unique_ptr<RandomAccessFile>(
      new RandomAccessFile(path, fd, static_cast<uint64_t>(st.st_size), direct, std::move(stats)));
}

RandomAccessFile::~RandomAccessFile() { ::close(fd_); }

Status RandomAccessFile::Read(uint64_t offset, size_t n, std::string* out, IoPurpose purpose) const {
  if (offset > size_ || n > size_ - offset) {
    return Status::Truncated("read past end of " + path_);
  }
  read_ops_.fetch_add(1, std::memory_order_relaxed);
  uint64_t disk_bytes = n;
  if (!direct_) {
    out->resize(n);
    size_t done = 0;
    while (done < n) {
      ssize_t r = ::pread(fd_, out->data() + done, n - done, static_cast<off_t>(offset + done));
      if (r < 0) {
        if (errno == EINTR) continue;
        return Errno("pread", path_);
      }
      if (r == 0) return Status::Truncated("short read on " + path_);
      done += static_cast<size_t>(r);
    }
  } else {
    uint64_t begin = offset & ~(uint64_t{kIoAlignment} - 1);
    uint64_t end = (offset + n + kIoAlignment - 1) & ~(uint64_t{kIoAlignment} - 1);
    size_t len = end - begin;
    void* raw = nullptr;
    if (posix_memalign(&raw, kIoAlignment, len) != 0) return Status::IoError("aligned allocation failed");
    std::unique_ptr<char, decltype(&std::free)> buf(static_cast<char*>(raw), &std::free);
    size_t done = 0;
    while (done < len) {
      ssize_t r = ::pread(fd_, buf.get() + done, len - done, static_cast<off_t>(begin + done));
      if (r < 0) {
        if (errno == EINTR) continue;
        return Errno("pread", path_);
      }
      if (r == 0) break;
      done += static_cast<size_t>(r);
    }
    if (begin + done < offset + n) return Status::Truncated("short read on " + path_);
    out->assign(buf.get() + (offset - begin), n);
    disk_bytes = len;
  }
  if (stats_) {
    Bump(stats_->disk_bytes_read, disk_bytes);
    if (purpose == IoPurpose::kCompaction) Bump(stats_->compaction_bytes_read, disk_bytes);
  }
  return Status::OK();
}

WritableFile::WritableFile(std::string path, int fd, bool direct, std::shared_ptr<IoStats> stats,
                           WritePurpose purpose)
    : path_(std::move(path)), fd_(fd), direct_(direct), stats_(std::move(stats)), purpose_(purpose) {
  void* raw = nullptr;
  if (posix_memalign(&raw, kIoAlignment, kStagingBytes) == 0) buf_ = static_cast<char*>(raw);
}

WritableFile::~WritableFile() {
  if (fd_ >= 0) (void)Close();
  std::free(buf_);
}

Result<std::unique_ptr<WritableFile>> WritableFile::Create(const std::string& path, bool direct_io,
                                                           std::shared_ptr<IoStats> stats, WritePurpose purpose) {
  int fd = -1;
  bool direct = false;
  const int flags = O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC;
  if (direct_io) {
    fd = ::open(path.c_str(), flags | O_DIRECT, 0644);
    direct = fd >= 0;
  }
  if (fd < 0) fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) return Errno("create", path);
  auto file = std::unique_ptr<WritableFile>(new WritableFile(path, fd, direct, std::move(stats), purpose));
  if (file->buf_ == nullptr) return Status::IoError("aligned allocation failed");
  return file;
}

Status WritableFile::WriteRaw(const char* data, size_t n) {
  size_t done = 0;
  while (done < n) {
    ssize_t r = ::write(fd_, data + done, n - done);
    if (r < 0) {
      if (errno == EINTR) continue;
      return Errno("write", path_);
    }
    done += static_cast<size_t>(r);
  }
  if (stats_) {
    Bump(stats_->disk_bytes_written, n);
    if (purpose_ == WritePurpose::kTable) Bump(stats_->compaction_bytes_written, n);
  }
  return Status::OK();
}

Status WritableFile::Append(std::string_view data) {
  if (fd_ < 0) return Status::IoError("append to closed file " + path_);
  size_ += data.size();
  while (!data.empty()) {
    size_t take = std::min(data.size(), kStagingBytes - buf_used_);
    std::memcpy(buf_ + buf_used_, data.data(), take);
    buf_used_ += take;
    data.remove_prefix(take);
    if (buf_used_ == kStagingBytes) {
      TPHKV_RETURN_IF_ERROR(WriteRaw(buf_, buf_used_));
      buf_used_ = 0;
    }
  }
  return Status::OK();
}

Status WritableFile::Flush() {
  if (buf_used_ == 0) return Status::OK();
  if (!direct_) {
    TPHKV_RETURN_IF_ERROR(WriteRaw(buf_, buf_used_));
    buf_used_ = 0;
    return Status::OK();
  }
  // Direct I/O: only whole pages leave the staging buffer before Close().
  size_t whole = buf_used_ & ~(kIoAlignment - 1);
  if (whole > 0) {
    TPHKV_RETURN_IF_ERROR(WriteRaw(buf_, whole));
    std::memmove(buf_, buf_ + whole, buf_used_ - whole);
    buf_used_ -= whole;
  }
  return Status::OK();
}

Status WritableFile::Sync() {
  TPHKV_RETURN_IF_ERROR(Flush());
  if (::fdatasync(fd_) != 0) return Errno("fdatasync", path_);
  return Status::OK();
}

Status WritableFile::Close(bool sync) {
  if (fd_ < 0) return Status::OK();
  Status s = Flush();
  if (s.ok() && direct_ && buf_used_ > 0) {
    size_t padded = (buf_used_ + kIoAlignment - 1) & ~(kIoAlignment - 1);
    std::memset(buf_ + buf_used_, 0, padded - buf_used_);
    s = WriteRaw(buf_, padded);
    buf_used_ = 0;
    if (s.ok() && ::ftruncate(fd_, static_cast<off_t>(size_)) != 0) s = Errno("ftruncate", path_);
  }
  if (s.ok() && sync && ::fdatasync(fd_) != 0) s = Errno("fdatasync", path_);
  if (::close(fd_) != 0 && s.ok()) s = Errno("close", path_);
  fd_ = -1;
  return s;
}

Status ReadWholeFile(const std::string& path, std::string* out, std::shared_ptr<IoStats> stats) {
  TPHKV_ASSIGN_OR_RETURN(auto file, RandomAccessFile::Open(path, false, std::move(stats)));
  return file->Read(0, file->size(), out, IoPurpose::kLoad);
}

Status SyncDir(const std::string& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return Errno("open dir", dir);
  int r = ::fsync(fd);
  ::close(fd);
  if (r != 0) return Errno("fsync dir", dir);
  return Status::OK();
}

}  // namespace tphkv
