#include "tphkv/status.h"

namespace tphkv {

std::string_view CodeName(Code code) {
  switch (code) {
    case Code::kOk: return "OK";
    case Code::kNotFound: return "NotFound";
    case Code::kInvalidArgument: return "InvalidArgument";
    case Code::kIoError: return "IoError";
    case Code::kChecksumMismatch: return "ChecksumMismatch";
    case Code::kTruncatedFile: return "TruncatedFile";
    case Code::kCorruptIndex: return "CorruptIndex";
    case Code::kCorruptManifest: return "CorruptManifest";
    case Code::kVersionMismatch: return "VersionMismatch";
    case Code::kMissingPiece: return "MissingPiece";
    case Code::kNoReverseIndex: return "NoReverseIndex";
    case Code::kDuplicateKeyHash: return "DuplicateKeyHash";
    case Code::kBuildFailure: return "BuildFailure";
    case Code::kSegmentOverflow: return "SegmentOverflow";
    case Code::kChecksumInitFailure: return "ChecksumInitFailure";
    case Code::kLockHeld: return "LockHeld";
    case Code::kWalReplayError: return "WalReplayError";
    case Code::kStopped: return "Stopped";
    case Code::kBudgetExceeded: return "BudgetExceeded";
    case Code::kVerificationFailure: return "VerificationFailure";
    case Code::kInvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

std::string Status::ToString() const {
  if (ok()) return "OK";
  std::string out(CodeName(code_));
  if (!msg_.empty()) {
    out += ": ";
    out += msg_;
  }
  return out;
}

}  // namespace tphkv
