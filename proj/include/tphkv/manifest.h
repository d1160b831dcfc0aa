#pragma once

// MANIFEST-<n>: a JSON snapshot of the current version followed by a line
// "crc32c=<hex>" over the JSON text. Commits write MANIFEST-<n>.tmp, sync,
// rename, then sync the directory; the highest-numbered intact file wins.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tphkv/io.h"
#include "tphkv/status.h"
#include "tphkv/tph.h"

namespace tphkv {

struct ManifestState {
  uint64_t version = 0;
  uint64_t next_file_number = 1;  // piece sequence numbers and WAL generations
  uint64_t next_tph_id = 1;
  uint64_t log_number = 0;        // oldest WAL generation still needed
  uint64_t last_sequence = 0;
  uint64_t hash_seed = 0;
  nlohmann::json config;          // structural settings echoed for validation
  std::vector<TphMeta> tphs;      // non-empty TPHs, any level

  bool operator==(const ManifestState&) const;
};

std::string ManifestFileName(uint64_t version);
std::string EncodeManifest(const ManifestState& state);
Result<ManifestState> DecodeManifest(std::string_view text);

// Writes MANIFEST-<state.version> atomically and removes older manifests.
Status CommitManifest(const std::string& dir, const ManifestState& state, std::shared_ptr<IoStats> stats);

// Latest manifest in `dir`, or nullopt for a fresh directory.
Result<std::optional<ManifestState>> LoadLatestManifest(const std::string& dir, std::shared_ptr<IoStats> stats);

}  // namespace tphkv
