#pragma once

// Workload driver: deterministic op streams, timed execution against one
// engine, amplification reporting, and replay-based verification.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "tphkv/engine.h"
#include "tphkv/status.h"

namespace tphkv::bench {

enum class Distribution { kUniform, kZipfian, kLatest };

std::string_view DistributionName(Distribution d);
Result<Distribution> ParseDistribution(std::string_view name);

// Workloads:
//   fillrandom        load only, keys in random order
//   readrandom        load, then uniform reads
//   readwhilewriting  load, then `threads` readers beside one writer stream
//   ycsb_a .. ycsb_f  load, then the standard YCSB core mixes
//   mixed             load, then read_fraction reads / updates
//   overwrite         load, then overwrite_rounds full overwrites, then one
//                     read of every key
struct WorkloadSpec {
  std::string name = "fillrandom";
  uint64_t num_keys = 100000;
  uint32_t key_size = 20;
  uint32_t value_size = 128;
  uint64_t op_count = 0;        // 0: num_keys
  uint32_t threads = 1;
  double read_fraction = -1.0;  // < 0: workload default
  std::optional<Distribution> distribution;
  uint64_t seed = 1;
  uint32_t scan_min = 1;
  uint32_t scan_max = 100;
  uint32_t overwrite_rounds = 10;

  Status Validate() const;
  nlohmann::json ToJson() const;
  static Result<WorkloadSpec> FromJson(const nlohmann::json& j);
};

// Resolved operation mix; fractions sum to 1.
struct OpMix {
  double read = 0, update = 0, insert = 0, scan = 0, rmw = 0;
  Distribution distribution = Distribution::kUniform;
  bool load = true;
};

Result<OpMix> MixFor(const WorkloadSpec& spec);

enum class OpKind { kLoad, kRead, kUpdate, kInsert, kScan, kReadModifyWrite };
constexpr int kOpKinds = 6;
std::string_view OpKindName(OpKind k);

struct Op {
  OpKind kind = OpKind::kRead;
  uint64_t key = 0;       // key index
  uint32_t version = 0;   // value version written
  uint32_t scan_len = 0;
};

// Fixed-width zero-padded decimal key of the given size.
std::string KeyFor(uint64_t index, uint32_t key_size);
std::string ValueFor(uint64_t index, uint64_t seed, uint32_t version, uint32_t value_size);

// YCSB zipfian over [0, n) with constant theta; ranks are scrambled over the
// key space when `scrambled`.
class ZipfianGenerator {
 public:
  ZipfianGenerator(uint64_t n, double theta = 0.99, bool scrambled = true);
  uint64_t Next(std::mt19937_64& rng);
  uint64_t n() const { return n_; }

 private:
  uint64_t n_;
  double theta_, alpha_, zetan_, eta_, half_pow_theta_;
  bool scrambled_;
};

// The deterministic op sequences of one run: `streams()` independent
// streams per phase, each fully determined by the spec.
class Workload {
 public:
  static Result<Workload> Create(const WorkloadSpec& spec);

  const WorkloadSpec& spec() const { return spec_; }
  const OpMix& mix() const { return mix_; }
  uint32_t load_streams() const { return spec_.threads; }
  uint32_t op_streams() const;

  // Calls `fn` for every op of the stream in order.
  void ForEachLoadOp(uint32_t stream, const std::function<void(const Op&)>& fn) const;
  void ForEachOp(uint32_t stream, const std::function<void(const Op&)>& fn) const;

  // Expected final version per key index (-1 = absent).
  std::vector<int32_t> ExpectedVersions() const;

 private:
  WorkloadSpec spec_;
  OpMix mix_;
  std::shared_ptr<ZipfianGenerator> zipf_;
};

struct LatencySummary {
  uint64_t count = 0;
  double avg_us = 0;
  double p99_us = 0;
};

struct BenchReport {
  std::string workload;
  std::string variant;
  uint64_t ops = 0;
  double seconds = 0;
  double ops_per_sec = 0;
  double load_seconds = 0;
  std::map<std::string, LatencySummary> latency;  // per op kind
  uint64_t reads_not_found = 0;
  uint64_t scanned_entries = 0;
  IoStatsSnapshot io;
  double wa = 0;
  double ra = 0;
  uint64_t resident_index_bytes = 0;
  uint64_t indexed_keys = 0;
  double index_bytes_per_key = 0;
  std::vector<LevelSummary> levels;

  // name=value lines, one metric per line.
  void WriteMetrics(std::ostream& os, const std::string& prefix = "") const;
  void WriteText(std::ostream& os) const;
  nlohmann::json ToJson() const;
};

// Loads and runs `spec` against a fresh store at config.dir. Writes
// bench.json (spec + structural config) next to the store for verify.
Result<BenchReport> Run(const WorkloadSpec& spec, const EngineConfig& config);

// A named engine variant for compare: "<mode>[:fanout]".
struct Variant {
  std::string name;
  EngineConfig config;
};
Result<Variant> ParseVariant(std::string_view text, const EngineConfig& base);

// Runs the same spec under every variant in a subdirectory of base_dir.
Result<std::vector<BenchReport>> Compare(const WorkloadSpec& spec, const std::vector<Variant>& variants,
                                         const std::string& base_dir);
void WriteComparison(std::ostream& os, const std::vector<BenchReport>& reports);

struct VerifyResult {
  bool pass = false;
  uint64_t keys_checked = 0;
  uint64_t scanned = 0;
  std::string diagnostic;  // first divergence or error
  Status status;           // VerificationFailure or the engine error met
};

// Rebuilds the expected contents from the recorded spec and `seed`, then
// checks every key and a full scan.
VerifyResult Verify(const std::string& dir, uint64_t seed);

extern const char kBenchMetaFile[];
nlohmann::json EngineConfigToJson(const EngineConfig& c);
Result<EngineConfig> EngineConfigFromJson(const nlohmann::json& j, const std::string& dir);

}  // namespace tphkv::bench
