#include "tphkv/bench.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "tphkv/hash.h"

namespace tphkv::bench {

namespace fs = std::filesystem;

const char kBenchMetaFile[] = "bench.json";

namespace {

Status InvalidSpec(std::string msg) { return Status(Code::kInvalidSpec, std::move(msg)); }

uint64_t SplitMix(uint64_t& x) {
  uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::mt19937_64 StreamRng(uint64_t seed, uint64_t phase, uint64_t stream) {
  uint64_t x = seed ^ (phase << 48) ^ (stream * 0x2545f4914f6cdd1dULL);
  return std::mt19937_64(SplitMix(x));
}

double Uniform01(std::mt19937_64& rng) { return (rng() >> 11) * (1.0 / 9007199254740992.0); }

uint64_t Digits(uint64_t v) {
  uint64_t d = 1;
  while (v >= 10) {
    v /= 10;
    ++d;
  }
  return d;
}

const std::vector<std::string>& WorkloadNames() {
  static const std::vector<std::string> names = {
      "fillrandom", "readrandom", "readwhilewriting", "ycsb_a", "ycsb_b", "ycsb_c",
      "ycsb_d",     "ycsb_e",     "ycsb_f",           "mixed",  "overwrite"};
  return names;
}

uint64_t EffectiveOps(const WorkloadSpec& s) { return s.op_count != 0 ? s.op_count : s.num_keys; }

// Share of `total` handled by stream `s` out of `n`.
uint64_t ShareOf(uint64_t total, uint32_t s, uint32_t n) { return total / n + (s < total % n ? 1 : 0); }

}  // namespace

std::string_view DistributionName(Distribution d) {
  switch (d) {
    case Distribution::kUniform:
      return "uniform";
    case Distribution::kZipfian:
      return "zipfian";
    case Distribution::kLatest:
      return "latest";
  }
  return "unknown";
}

Result<Distribution> ParseDistribution(std::string_view name) {
  if (name == "uniform") return Distribution::kUniform;
  if (name == "zipfian") return Distribution::kZipfian;
  if (name == "latest") return Distribution::kLatest;
  return InvalidSpec("unknown distribution: " + std::string(name));
}

std::string_view OpKindName(OpKind k) {
  switch (k) {
    case OpKind::kLoad:
      return "load";
    case OpKind::kRead:
      return "read";
    case OpKind::kUpdate:
      return "update";
    case OpKind::kInsert:
      return "insert";
    case OpKind::kScan:
      return "scan";
    case OpKind::kReadModifyWrite:
      return "rmw";
  }
  return "unknown";
}

Status WorkloadSpec::Validate() const {
  const auto& names = WorkloadNames();
  if (std::find(names.begin(), names.end(), name) == names.end()) return InvalidSpec("unknown workload: " + name);
  if (num_keys == 0) return InvalidSpec("num_keys must be positive");
  if (value_size == 0 || key_size == 0) return InvalidSpec("key and value sizes must be positive");
  if (key_size > 1024) return InvalidSpec("key_size above 1024");
  if (threads == 0) return InvalidSpec("threads must be positive");
  if (read_fraction > 1.0) return InvalidSpec("read_fraction must lie in [0, 1]");
  if (scan_min == 0 || scan_min > scan_max) return InvalidSpec("scan length range must satisfy 1 <= min <= max");
  if (overwrite_rounds == 0) return InvalidSpec("overwrite_rounds must be positive");
  // Inserted keys extend the index space past num_keys.
  if (Digits(num_keys + EffectiveOps(*this) + threads) > key_size) {
    return InvalidSpec("key_size too small for the key space");
  }
  return Status::OK();
}

nlohmann::json WorkloadSpec::ToJson() const {
  nlohmann::json j = {{"name", name},
                      {"num_keys", num_keys},
                      {"key_size", key_size},
                      {"value_size", value_size},
                      {"op_count", op_count},
                      {"threads", threads},
                      {"read_fraction", read_fraction},
                      {"seed", seed},
                      {"scan_min", scan_min},
                      {"scan_max", scan_max},
                      {"overwrite_rounds", overwrite_rounds}};
  if (distribution) j["distribution"] = std::string(DistributionName(*distribution));
  return j;
}

Result<WorkloadSpec> WorkloadSpec::FromJson(const nlohmann::json& j) {
  try {
    WorkloadSpec s;
    s.name = j.at("name").get<std::string>();
    s.num_keys = j.at("num_keys").get<uint64_t>();
    s.key_size = j.at("key_size").get<uint32_t>();
    s.value_size = j.at("value_size").get<uint32_t>();
    s.op_count = j.at("op_count").get<uint64_t>();
    s.threads = j.at("threads").get<uint32_t>();
    s.read_fraction = j.at("read_fraction").get<double>();
    s.seed = j.at("seed").get<uint64_t>();
    s.scan_min = j.at("scan_min").get<uint32_t>();
    s.scan_max = j.at("scan_max").get<uint32_t>();
    s.overwrite_rounds = j.at("overwrite_rounds").get<uint32_t>();
    if (j.contains("distribution")) {
      TPHKV_ASSIGN_OR_RETURN(Distribution d, ParseDistribution(j.at("distribution").get<std::string>()));
      s.distribution = d;
    }
    return s;
  } catch (const std::exception& e) {
    return InvalidSpec(std::string("bad workload record: ") + e.what());
  }
}

Result<OpMix> MixFor(const WorkloadSpec& spec) {
  TPHKV_RETURN_IF_ERROR(spec.Validate());
  OpMix m;
  const std::string& n = spec.name;
  if (n == "fillrandom") {
    // Load phase only.
  } else if (n == "readrandom") {
    m.read = 1.0;
  } else if (n == "readwhilewriting") {
    m.read = spec.read_fraction >= 0 ? spec.read_fraction : 0.9;
    m.update = 1.0 - m.read;
  } else if (n == "ycsb_a") {
    m.read = 0.5, m.update = 0.5, m.distribution = Distribution::kZipfian;
  } else if (n == "ycsb_b") {
    m.read = 0.95, m.update = 0.05, m.distribution = Distribution::kZipfian;
  } else if (n == "ycsb_c") {
    m.read = 1.0, m.distribution = Distribution::kZipfian;
  } else if (n == "ycsb_d") {
    m.read = 0.95, m.insert = 0.05, m.distribution = Distribution::kLatest;
  } else if (n == "ycsb_e") {
    m.scan = 0.95, m.insert = 0.05, m.distribution = Distribution::kZipfian;
  } else if (n == "ycsb_f") {
    m.read = 0.5, m.rmw = 0.5, m.distribution = Distribution::kZipfian;
  } else if (n == "mixed") {
    m.read = spec.read_fraction >= 0 ? spec.read_fraction : 0.9;
    m.update = 1.0 - m.read;
  } else if (n == "overwrite") {
    m.update = 1.0;
  }
  if (spec.distribution) m.distribution = *spec.distribution;
  return m;
}

std::string KeyFor(uint64_t index, uint32_t key_size) {
  std::string digits = std::to_string(index);
  if (digits.size() >= key_size) return digits;
  return std::string(key_size - digits.size(), '0') + digits;
}

std::string ValueFor(uint64_t index, uint64_t seed, uint32_t version, uint32_t value_size) {
  std::string v(value_size, '\0');
  uint64_t x = Fmix64(index * 0x9e3779b97f4a7c15ULL ^ seed) + version;
  for (uint32_t i = 0; i < value_size; i += 8) {
    uint64_t r = SplitMix(x);
    for (uint32_t b = 0; b < 8 && i + b < value_size; ++b) v[i + b] = static_cast<char>('a' + ((r >> (b * 8)) & 0xff) % 26);
  }
  return v;
}

ZipfianGenerator::ZipfianGenerator(uint64_t n, double theta, bool scrambled)
    : n_(std::max<uint64_t>(n, 1)), theta_(theta), scrambled_(scrambled) {
  double zeta2 = 1.0 + std::pow(0.5, theta_);
  zetan_ = 0;
  for (uint64_t i = 1; i <= n_; ++i) zetan_ += 1.0 / std::pow(static_cast<double>(i), theta_);
  alpha_ = 1.0 / (1.0 - theta_);
  eta_ = (1.0 - std::pow(2.0 / static_cast<double>(n_), 1.0 - theta_)) / (1.0 - zeta2 / zetan_);
  half_pow_theta_ = 1.0 + std::pow(0.5, theta_);
}

uint64_t ZipfianGenerator::Next(std::mt19937_64& rng) {
  double u = Uniform01(rng);
  double uz = u * zetan_;
  uint64_t rank;
  if (uz < 1.0) {
    rank = 0;
  } else if (uz < half_pow_theta_) {
    rank = 1;
  } else {
    rank = static_cast<uint64_t>(static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
  }
  rank = std::min(rank, n_ - 1);
  return scrambled_ ? Fmix64(rank ^ 0xc3a5c85c97cb3127ULL) % n_ : rank;
}

Result<Workload> Workload::Create(const WorkloadSpec& spec) {
  Workload w;
  w.spec_ = spec;
  TPHKV_ASSIGN_OR_RETURN(w.mix_, MixFor(spec));
  if (w.mix_.distribution != Distribution::kUniform) {
    w.zipf_ = std::make_shared<ZipfianGenerator>(spec.num_keys, 0.99,
                                                 w.mix_.distribution == Distribution::kZipfian);
  }
  return w;
}

uint32_t Workload::op_streams() const {
  if (spec_.name == "fillrandom") return 0;
  if (spec_.name == "readwhilewriting") return spec_.threads + 1;
  return spec_.threads;
}

void Workload::ForEachLoadOp(uint32_t stream, const std::function<void(const Op&)>& fn) const {
  // One shared permutation of the key space; stream s takes every T-th slot.
  std::vector<uint64_t> perm(spec_.num_keys);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = StreamRng(spec_.seed, 1, 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Op op;
  op.kind = OpKind::kLoad;
  for (uint64_t i = stream; i < perm.size(); i += spec_.threads) {
    op.key = perm[i];
    fn(op);
  }
}

void Workload::ForEachOp(uint32_t stream, const std::function<void(const Op&)>& fn) const {
  auto rng = StreamRng(spec_.seed, 2, stream);
  const uint32_t T = spec_.threads;
  const uint64_t N = spec_.num_keys;
  Op op;

  if (spec_.name == "overwrite") {
    std::vector<uint64_t> keys;
    for (uint64_t i = stream; i < N; i += T) keys.push_back(i);
    op.kind = OpKind::kUpdate;
    for (uint32_t r = 1; r <= spec_.overwrite_rounds; ++r) {
      std::shuffle(keys.begin(), keys.end(), rng);
      op.version = r;
      for (uint64_t k : keys) {
        op.key = k;
        fn(op);
      }
    }
    std::shuffle(keys.begin(), keys.end(), rng);
    op.kind = OpKind::kRead;
    op.version = 0;
    for (uint64_t k : keys) {
      op.key = k;
      fn(op);
    }
    return;
  }

  const uint64_t total = EffectiveOps(spec_);
  uint64_t count;
  OpMix mix = mix_;
  if (spec_.name == "readwhilewriting") {
    // Streams [0, T) read; stream T is the single writer.
    uint64_t reads = static_cast<uint64_t>(std::llround(static_cast<double>(total) * mix_.read));
    if (stream == T) {
      count = total - reads;
      mix = OpMix{0, 1, 0, 0, 0, mix_.distribution, true};
    } else {
      count = ShareOf(reads, stream, T);
      mix = OpMix{1, 0, 0, 0, 0, mix_.distribution, true};
    }
  } else {
    count = ShareOf(total, stream, T);
  }

  uint64_t inserted = 0;
  auto insert_index = [&](uint64_t j) { return N + stream + static_cast<uint64_t>(T) * j; };
  auto pick = [&]() -> uint64_t {
    switch (mix.distribution) {
      case Distribution::kUniform:
        return rng() % N;
      case Distribution::kZipfian:
        return zipf_->Next(rng);
      case Distribution::kLatest: {
        uint64_t rank = zipf_->Next(rng);  // 0 = newest
        if (rank < inserted) return insert_index(inserted - 1 - rank);
        rank -= inserted;
        return rank < N ? N - 1 - rank : 0;
      }
    }
    return 0;
  };
  for (uint64_t i = 0; i < count; ++i) {
    double u = Uniform01(rng);
    op = Op{};
    if ((u -= mix.read) < 0) {
      op.kind = OpKind::kRead;
      op.key = pick();
    } else if ((u -= mix.update) < 0) {
      op.kind = OpKind::kUpdate;
      op.key = pick();
      op.version = 1;
    } else if ((u -= mix.insert) < 0) {
      op.kind = OpKind::kInsert;
      op.key = insert_index(inserted++);
    } else if ((u -= mix.scan) < 0) {
      op.kind = OpKind::kScan;
      op.key = pick();
      op.scan_len = spec_.scan_min + static_cast<uint32_t>(rng() % (spec_.scan_max - spec_.scan_min + 1));
    } else {
      op.kind = OpKind::kReadModifyWrite;
      op.key = pick();
      op.version = 1;
    }
    fn(op);
  }
}

std::vector<int32_t> Workload::ExpectedVersions() const {
  std::vector<int32_t> v(spec_.num_keys, 0);  // loaded at version 0
  for (uint32_t s = 0; s < op_streams(); ++s) {
    ForEachOp(s, [&](const Op& op) {
      switch (op.kind) {
        case OpKind::kUpdate:
        case OpKind::kReadModifyWrite:
        case OpKind::kInsert:
          if (op.key >= v.size()) v.resize(op.key + 1, -1);
          v[op.key] = std::max<int32_t>(v[op.key], static_cast<int32_t>(op.version));
          break;
        default:
          break;
      }
    });
  }
  return v;
}

void BenchReport::WriteMetrics(std::ostream& os, const std::string& prefix) const {
  auto line = [&](const std::string& name, auto value) { os << prefix << name << "=" << value << "\n"; };
  os << std::setprecision(6);
  line("workload", workload);
  if (!variant.empty()) line("variant", variant);
  line("ops", ops);
  line("seconds", seconds);
  line("ops_per_sec", ops_per_sec);
  line("load_seconds", load_seconds);
  for (const auto& [k, l] : latency) {
    line("latency." + k + ".count", l.count);
    line("latency." + k + ".avg_us", l.avg_us);
    line("latency." + k + ".p99_us", l.p99_us);
  }
  line("reads_not_found", reads_not_found);
  line("scanned_entries", scanned_entries);
  line("user_bytes_written", io.user_bytes_written);
  line("disk_bytes_written", io.disk_bytes_written);
  line("user_bytes_read", io.user_bytes_read);
  line("disk_bytes_read", io.disk_bytes_read);
  line("compaction_bytes_read", io.compaction_bytes_read);
  line("compaction_bytes_written", io.compaction_bytes_written);
  line("block_reads", io.block_reads);
  line("gets", io.gets);
  line("puts", io.puts);
  line("wa", wa);
  line("ra", ra);
  line("resident_index_bytes", resident_index_bytes);
  line("index_bytes_per_key", index_bytes_per_key);
  for (const LevelSummary& l : levels) {
    std::string p = "level" + std::to_string(l.level) + ".";
    line(p + "tphs", l.tphs);
    line(p + "pieces", l.pieces);
    line(p + "max_pieces_per_tph", l.max_pieces_per_tph);
    line(p + "live_keys", l.live_keys);
    line(p + "file_bytes", l.file_bytes);
  }
}

void BenchReport::WriteText(std::ostream& os) const {
  os << std::fixed << std::setprecision(2);
  os << workload << (variant.empty() ? "" : " [" + variant + "]") << ": " << ops << " ops in " << seconds
     << " s, " << ops_per_sec << " ops/sec (load " << load_seconds << " s)\n";
  for (const auto& [k, l] : latency) {
    os << "  " << std::left << std::setw(7) << k << std::right << " count " << l.count << "  avg " << l.avg_us
       << " us  p99 " << l.p99_us << " us\n";
  }
  os << "  wa " << wa << "  ra " << ra << "  compaction read " << io.compaction_bytes_read / 1048576.0
     << " MiB  written " << io.compaction_bytes_written / 1048576.0 << " MiB\n";
  os << "  index " << index_bytes_per_key << " bytes/key over " << indexed_keys << " keys\n";
  for (const LevelSummary& l : levels) {
    if (l.tphs == 0) continue;
    os << "  L" << l.level << ": " << l.tphs << " TPHs, " << l.pieces << " pieces (max " << l.max_pieces_per_tph
       << "/TPH), " << l.live_keys << " keys\n";
  }
  os << std::defaultfloat;
}

nlohmann::json BenchReport::ToJson() const {
  nlohmann::json j = {{"workload", workload},
                      {"variant", variant},
                      {"ops", ops},
                      {"seconds", seconds},
                      {"ops_per_sec", ops_per_sec},
                      {"load_seconds", load_seconds},
                      {"reads_not_found", reads_not_found},
                      {"scanned_entries", scanned_entries},
                      {"wa", wa},
                      {"ra", ra},
                      {"user_bytes_written", io.user_bytes_written},
                      {"disk_bytes_written", io.disk_bytes_written},
                      {"user_bytes_read", io.user_bytes_read},
                      {"disk_bytes_read", io.disk_bytes_read},
                      {"compaction_bytes_read", io.compaction_bytes_read},
                      {"compaction_bytes_written", io.compaction_bytes_written},
                      {"block_reads", io.block_reads},
                      {"resident_index_bytes", resident_index_bytes},
                      {"index_bytes_per_key", index_bytes_per_key}};
  for (const auto& [k, l] : latency) j["latency"][k] = {{"count", l.count}, {"avg_us", l.avg_us}, {"p99_us", l.p99_us}};
  for (const LevelSummary& l : levels) {
    j["levels"].push_back({{"level", l.level}, {"tphs", l.tphs}, {"pieces", l.pieces}, {"live_keys", l.live_keys}});
  }
  return j;
}

nlohmann::json EngineConfigToJson(const EngineConfig& c) {
  return {{"mode", std::string(EngineModeName(c.mode))},
          {"memtable_bytes", c.memtable_bytes},
          {"max_memtables", c.max_memtables},
          {"levels", c.levels},
          {"fanout", c.fanout},
          {"max_pieces", c.max_pieces},
          {"scale_c", c.scale_c},
          {"segment_count", c.segment_count},
          {"sample_interval", c.sample_interval},
          {"page_size", c.page_size},
          {"direct_io", c.direct_io},
          {"l0_trigger", c.l0_trigger},
          {"level1_bytes", c.level1_bytes},
          {"level_ratio", c.level_ratio},
          {"invalid_ratio", c.invalid_ratio}};
}

Result<EngineConfig> EngineConfigFromJson(const nlohmann::json& j, const std::string& dir) {
  try {
    EngineConfig c;
    c.dir = dir;
    TPHKV_ASSIGN_OR_RETURN(c.mode, ParseEngineMode(j.at("mode").get<std::string>()));
    c.memtable_bytes = j.at("memtable_bytes").get<uint64_t>();
    c.max_memtables = j.at("max_memtables").get<uint32_t>();
    c.levels = j.at("levels").get<uint32_t>();
    c.fanout = j.at("fanout").get<uint32_t>();
    c.max_pieces = j.at("max_pieces").get<uint32_t>();
    c.scale_c = j.at("scale_c").get<double>();
    c.segment_count = j.at("segment_count").get<uint32_t>();
    c.sample_interval = j.at("sample_interval").get<uint32_t>();
    c.page_size = j.at("page_size").get<uint64_t>();
    c.direct_io = j.at("direct_io").get<bool>();
    c.l0_trigger = j.at("l0_trigger").get<uint32_t>();
    c.level1_bytes = j.at("level1_bytes").get<uint64_t>();
    c.level_ratio = j.at("level_ratio").get<double>();
    c.invalid_ratio = j.at("invalid_ratio").get<double>();
    return c;
  } catch (const std::exception& e) {
    return InvalidSpec(std::string("bad engine record: ") + e.what());
  }
}

namespace {

struct ThreadResult {
  std::vector<std::vector<float>> lat = std::vector<std::vector<float>>(kOpKinds);
  uint64_t not_found = 0;
  uint64_t scanned = 0;
  Status status;
};

Status Execute(Engine& engine, const WorkloadSpec& spec, const Op& op, ThreadResult* r) {
  std::string key = KeyFor(op.key, spec.key_size);
  switch (op.kind) {
    case OpKind::kLoad:
      return engine.Put(key, ValueFor(op.key, spec.seed, 0, spec.value_size));
    case OpKind::kUpdate:
    case OpKind::kInsert:
      return engine.Put(key, ValueFor(op.key, spec.seed, op.version, spec.value_size));
    case OpKind::kRead: {
      std::string v;
      Status s = engine.Get(key, &v);
      if (s.IsNotFound()) {
        ++r->not_found;
        return Status::OK();
      }
      return s;
    }
    case OpKind::kReadModifyWrite: {
      std::string v;
      Status s = engine.Get(key, &v);
      if (!s.ok() && !s.IsNotFound()) return s;
      return engine.Put(key, ValueFor(op.key, spec.seed, op.version, spec.value_size));
    }
    case OpKind::kScan: {
      auto it = engine.NewIterator(key);
      uint32_t n = 0;
      for (it->SeekToFirst(); it->Valid() && n < op.scan_len; it->Next()) ++n;
      r->scanned += n;
      return it->status();
    }
  }
  return Status::OK();
}

// Runs `streams` streams on their own threads; returns wall seconds.
double RunStreams(Engine& engine, const WorkloadSpec& spec, uint32_t streams,
                  const std::function<void(uint32_t, const std::function<void(const Op&)>&)>& for_each,
                  std::vector<ThreadResult>* results) {
  results->assign(streams, ThreadResult{});
  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::thread> threads;
  for (uint32_t s = 0; s < streams; ++s) {
    threads.emplace_back([&, s] {
      ThreadResult& r = (*results)[s];
      for_each(s, [&](const Op& op) {
        if (!r.status.ok()) return;
        auto a = std::chrono::steady_clock::now();
        r.status = Execute(engine, spec, op, &r);
        auto b = std::chrono::steady_clock::now();
        r.lat[static_cast<int>(op.kind)].push_back(std::chrono::duration<float, std::micro>(b - a).count());
      });
    });
  }
  for (auto& t : threads) t.join();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

LatencySummary Summarize(std::vector<float> v) {
  LatencySummary s;
  s.count = v.size();
  if (v.empty()) return s;
  s.avg_us = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  size_t k = std::min(v.size() - 1, static_cast<size_t>(std::ceil(0.99 * v.size())) - 1);
  std::nth_element(v.begin(), v.begin() + k, v.end());
  s.p99_us = v[k];
  return s;
}

}  // namespace

Result<BenchReport> Run(const WorkloadSpec& spec, const EngineConfig& config) {
  TPHKV_ASSIGN_OR_RETURN(Workload w, Workload::Create(spec));
  std::error_code ec;
  if (fs::exists(config.dir, ec) && !fs::is_empty(config.dir, ec)) {
    return InvalidSpec("target directory is not empty: " + config.dir);
  }
  TPHKV_ASSIGN_OR_RETURN(auto engine, Engine::Open(config));

  BenchReport report;
  report.workload = spec.name;
  std::vector<ThreadResult> load_results, op_results;
  report.load_seconds = RunStreams(
      *engine, spec, w.load_streams(), [&](uint32_t s, const auto& fn) { w.ForEachLoadOp(s, fn); }, &load_results);
  double op_seconds = 0;
  if (w.op_streams() > 0) {
    op_seconds = RunStreams(
        *engine, spec, w.op_streams(), [&](uint32_t s, const auto& fn) { w.ForEachOp(s, fn); }, &op_results);
  }
  for (const auto* set : {&load_results, &op_results}) {
    for (const ThreadResult& r : *set) TPHKV_RETURN_IF_ERROR(r.status);
  }
  // Settle: everything written is in TPHs before counters are read.
  TPHKV_RETURN_IF_ERROR(engine->Flush());

  std::vector<std::vector<float>> merged(kOpKinds);
  for (const auto* set : {&load_results, &op_results}) {
    for (const ThreadResult& r : *set) {
      for (int k = 0; k < kOpKinds; ++k) merged[k].insert(merged[k].end(), r.lat[k].begin(), r.lat[k].end());
      report.reads_not_found += r.not_found;
      report.scanned_entries += r.scanned;
    }
  }
  for (int k = 0; k < kOpKinds; ++k) {
    if (!merged[k].empty()) report.latency[std::string(OpKindName(static_cast<OpKind>(k)))] = Summarize(std::move(merged[k]));
  }
  if (w.op_streams() > 0) {
    report.seconds = op_seconds;
    for (const ThreadResult& r : op_results) {
      for (int k = 0; k < kOpKinds; ++k) report.ops += r.lat[k].size();
    }
  } else {
    report.seconds = report.load_seconds;
    for (const ThreadResult& r : load_results) report.ops += r.lat[0].size();
  }
  report.ops_per_sec = report.seconds > 0 ? report.ops / report.seconds : 0;
  report.io = engine->stats();
  report.wa = report.io.write_amplification();
  report.ra = report.io.read_amplification();
  EngineSummary sum = engine->Summary();
  report.resident_index_bytes = sum.resident_index_bytes;
  report.indexed_keys = sum.indexed_keys;
  report.index_bytes_per_key =
      sum.indexed_keys == 0 ? 0.0 : static_cast<double>(sum.resident_index_bytes) / sum.indexed_keys;
  report.levels = sum.levels;
  TPHKV_RETURN_IF_ERROR(engine->Close());

  nlohmann::json meta = {{"spec", spec.ToJson()}, {"engine", EngineConfigToJson(config)}, {"report", report.ToJson()}};
  std::ofstream(config.dir + "/" + kBenchMetaFile) << meta.dump(1) << "\n";
  return report;
}

Result<Variant> ParseVariant(std::string_view text, const EngineConfig& base) {
  Variant v;
  v.name = std::string(text);
  v.config = base;
  std::string_view mode = text;
  size_t colon = text.find(':');
  if (colon != std::string_view::npos) {
    mode = text.substr(0, colon);
    std::string f(text.substr(colon + 1));
    if (f.empty() || f.find_first_not_of("0123456789") != std::string::npos) {
      return InvalidSpec("bad fanout in variant: " + v.name);
    }
    v.config.fanout = static_cast<uint32_t>(std::stoul(f));
  }
  TPHKV_ASSIGN_OR_RETURN(v.config.mode, ParseEngineMode(mode));
  if (v.config.mode == EngineMode::kSingleTier && v.config.max_pieces > 2) v.config.max_pieces = 0;
  return v;
}

Result<std::vector<BenchReport>> Compare(const WorkloadSpec& spec, const std::vector<Variant>& variants,
                                         const std::string& base_dir) {
  std::vector<BenchReport> out;
  for (size_t i = 0; i < variants.size(); ++i) {
    EngineConfig c = variants[i].config;
    std::string sub = variants[i].name;
    std::replace(sub.begin(), sub.end(), ':', '-');
    c.dir = base_dir + "/" + std::to_string(i) + "-" + sub;
    TPHKV_ASSIGN_OR_RETURN(BenchReport r, Run(spec, c));
    r.variant = variants[i].name;
    out.push_back(std::move(r));
  }
  return out;
}

void WriteComparison(std::ostream& os, const std::vector<BenchReport>& reports) {
  os << std::left << std::setw(24) << "variant" << std::right << std::setw(10) << "wa" << std::setw(10) << "ra"
     << std::setw(16) << "compact_rd_MiB" << std::setw(16) << "compact_wr_MiB" << std::setw(10) << "seconds"
     << std::setw(12) << "idx_B/key" << "\n";
  os << std::fixed << std::setprecision(3);
  for (const BenchReport& r : reports) {
    os << std::left << std::setw(24) << r.variant << std::right << std::setw(10) << r.wa << std::setw(10) << r.ra
       << std::setw(16) << r.io.compaction_bytes_read / 1048576.0 << std::setw(16)
       << r.io.compaction_bytes_written / 1048576.0 << std::setw(10) << r.seconds + r.load_seconds << std::setw(12)
       << r.index_bytes_per_key << "\n";
  }
  os << std::defaultfloat;
}

VerifyResult Verify(const std::string& dir, uint64_t seed) {
  VerifyResult res;
  auto fail = [&](Status s, std::string diag) {
    res.pass = false;
    res.status = std::move(s);
    res.diagnostic = std::move(diag);
    return res;
  };
  nlohmann::json meta;
  try {
    std::ifstream in(dir + "/" + kBenchMetaFile);
    if (!in) return fail(Status(Code::kVerificationFailure, "no bench record"), "missing " + std::string(kBenchMetaFile));
    meta = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    return fail(Status(Code::kVerificationFailure, "bad bench record"), e.what());
  }
  auto spec = WorkloadSpec::FromJson(meta.at("spec"));
  if (!spec.ok()) return fail(spec.status(), spec.status().ToString());
  spec->seed = seed;
  auto config = EngineConfigFromJson(meta.at("engine"), dir);
  if (!config.ok()) return fail(config.status(), config.status().ToString());
  auto w = Workload::Create(*spec);
  if (!w.ok()) return fail(w.status(), w.status().ToString());
  auto engine = Engine::Open(*config);
  if (!engine.ok()) return fail(engine.status(), "open: " + engine.status().ToString());

  const std::vector<int32_t> expected = w->ExpectedVersions();
  std::string v;
  for (uint64_t i = 0; i < expected.size(); ++i) {
    std::string key = KeyFor(i, spec->key_size);
    Status s = (*engine)->Get(key, &v);
    ++res.keys_checked;
    if (expected[i] < 0) {
      if (s.ok()) return fail(Status(Code::kVerificationFailure, "unexpected key"), "key " + key + " should be absent");
      if (!s.IsNotFound()) return fail(s, "key " + key + ": " + s.ToString());
      continue;
    }
    if (!s.ok()) {
      if (s.IsNotFound()) return fail(Status(Code::kVerificationFailure, "missing key"), "key " + key + " not found");
      return fail(s, "key " + key + ": " + s.ToString());
    }
    if (v != ValueFor(i, seed, expected[i], spec->value_size)) {
      return fail(Status(Code::kVerificationFailure, "value mismatch"), "key " + key + " holds a different value");
    }
  }
  auto it = (*engine)->NewIterator();
  uint64_t next = 0;
  for (it->SeekToFirst(); it->Valid(); it->Next()) {
    while (next < expected.size() && expected[next] < 0) ++next;
    if (next >= expected.size()) {
      return fail(Status(Code::kVerificationFailure, "extra key"), "scan yields unexpected " + std::string(it->key()));
    }
    std::string key = KeyFor(next, spec->key_size);
    if (it->key() != key) {
      return fail(Status(Code::kVerificationFailure, "scan divergence"),
                  "scan yields " + std::string(it->key()) + ", expected " + key);
    }
    if (it->value() != ValueFor(next, seed, expected[next], spec->value_size)) {
      return fail(Status(Code::kVerificationFailure, "scan value mismatch"), "key " + key);
    }
    ++next;
    ++res.scanned;
  }
  if (!it->status().ok()) return fail(it->status(), "scan: " + it->status().ToString());
  while (next < expected.size() && expected[next] < 0) ++next;
  if (next < expected.size()) {
    return fail(Status(Code::kVerificationFailure, "scan ended early"),
                "scan is missing " + KeyFor(next, spec->key_size));
  }
  res.pass = true;
  return res;
}

}  // namespace tphkv::bench
