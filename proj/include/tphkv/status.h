#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace tphkv {

// Error categories surfaced across module boundaries. Names follow the
// failure each one reports rather than the layer that raised it.
enum class Code {
  kOk = 0,
  kNotFound,
  kInvalidArgument,
  kIoError,
  kChecksumMismatch,
  kTruncatedFile,
  kCorruptIndex,
  kCorruptManifest,
  kVersionMismatch,
  kMissingPiece,
  kNoReverseIndex,
  kDuplicateKeyHash,
  kBuildFailure,
  kSegmentOverflow,
  kChecksumInitFailure,
  kLockHeld,
  kWalReplayError,
  kStopped,
  kBudgetExceeded,
  kVerificationFailure,
  kInvalidSpec,
};

std::string_view CodeName(Code code);

class [[nodiscard]] Status {
 public:
  Status() = default;
  Status(Code code, std::string msg) : code_(code), msg_(std::move(msg)) {}

  static Status OK() { return Status(); }
  static Status NotFound(std::string msg = {}) { return {Code::kNotFound, std::move(msg)}; }
  static Status InvalidArgument(std::string msg) { return {Code::kInvalidArgument, std::move(msg)}; }
  static Status IoError(std::string msg) { return {Code::kIoError, std::move(msg)}; }
  static Status ChecksumMismatch(std::string msg) { return {Code::kChecksumMismatch, std::move(msg)}; }
  static Status Truncated(std::string msg) { return {Code::kTruncatedFile, std::move(msg)}; }

  bool ok() const { return code_ == Code::kOk; }
  bool IsNotFound() const { return code_ == Code::kNotFound; }
  Code code() const { return code_; }
  const std::string& message() const { return msg_; }

  std::string ToString() const;

 private:
  Code code_ = Code::kOk;
  std::string msg_;
};

// Either a value or a non-OK Status.
template <typename T>
class [[nodiscard]] Result {
 public:
  Result(T value) : data_(std::move(value)) {}  // NOLINT
  Result(Status status) : data_(std::move(status)) {}  // NOLINT

  bool ok() const { return std::holds_alternative<T>(data_); }
  const Status& status() const {
    static const Status kOkStatus;
    return ok() ? kOkStatus : std::get<Status>(data_);
  }
  T& value() & { return std::get<T>(data_); }
  const T& value() const& { return std::get<T>(data_); }
  T&& value() && { return std::get<T>(std::move(data_)); }
  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }
  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }

 private:
  std::variant<T, Status> data_;
};

#define TPHKV_RETURN_IF_ERROR(expr)      \
  do {                                   \
    ::tphkv::Status _st = (expr);        \
    if (!_st.ok()) return _st;           \
  } while (0)

#define TPHKV_CONCAT_INNER(a, b) a##b
#define TPHKV_CONCAT(a, b) TPHKV_CONCAT_INNER(a, b)
#define TPHKV_ASSIGN_OR_RETURN_IMPL(tmp, lhs, expr) \
  auto tmp = (expr);                                \
  if (!tmp.ok()) return tmp.status();               \
  lhs = std::move(tmp).value()
#define TPHKV_ASSIGN_OR_RETURN(lhs, expr) \
  TPHKV_ASSIGN_OR_RETURN_IMPL(TPHKV_CONCAT(_res_, __LINE__), lhs, expr)

}  // namespace tphkv
