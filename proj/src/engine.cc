#include "tphkv/engine.h"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

namespace tphkv {

namespace fs = std::filesystem;
using piece::Record;
using piece::ValueKind;

namespace {

uint64_t NowMs() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string WalFileName(uint64_t gen) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06llu.log", static_cast<unsigned long long>(gen));
  return buf;
}

// Parses "<digits><suffix>"; nullopt otherwise.
std::optional<uint64_t> ParseNumbered(const std::string& name, std::string_view suffix) {
  if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
    return std::nullopt;
  }
  std::string num = name.substr(0, name.size() - suffix.size());
  if (num.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  return std::stoull(num);
}

// Runs are ordered newest first; each is sorted with unique keys. Keeps the
// newest record per key.
std::vector<Record> MergeRuns(std::vector<std::vector<Record>> runs) {
  if (runs.size() == 1) return std::move(runs[0]);
  std::vector<std::pair<Record*, size_t>> all;
  for (size_t r = 0; r < runs.size(); ++r) {
    for (Record& rec : runs[r]) all.emplace_back(&rec, r);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    int c = a.first->key.compare(b.first->key);
    return c != 0 ? c < 0 : a.second < b.second;
  });
  std::vector<Record> out;
  out.reserve(all.size());
  for (auto& [rec, r] : all) {
    if (!out.empty() && out.back().key == rec->key) continue;
    out.push_back(std::move(*rec));
  }
  return out;
}

nlohmann::json ConfigEcho(const EngineConfig& c) {
  return {{"mode", std::string(EngineModeName(c.mode))}, {"fanout", c.fanout}, {"levels", c.EffectiveLevels()}};
}

}  // namespace

std::string_view EngineModeName(EngineMode mode) {
  switch (mode) {
    case EngineMode::kLeveledHashRange:
      return "leveled_hash_range";
    case EngineMode::kOneLevel:
      return "one_level";
    case EngineMode::kSingleTier:
      return "single_tier";
  }
  return "unknown";
}

Result<EngineMode> ParseEngineMode(std::string_view name) {
  if (name == "leveled_hash_range" || name == "leveled") return EngineMode::kLeveledHashRange;
  if (name == "one_level") return EngineMode::kOneLevel;
  if (name == "single_tier") return EngineMode::kSingleTier;
  return Status::InvalidArgument("unknown engine mode: " + std::string(name));
}

uint32_t EngineConfig::EffectiveMaxPieces() const {
  if (max_pieces != 0) return max_pieces;
  return mode == EngineMode::kSingleTier ? 2 : 16;
}

uint32_t EngineConfig::EffectiveLevels() const { return mode == EngineMode::kOneLevel ? 2 : levels; }

uint64_t EngineConfig::EffectiveLevel1Bytes() const {
  return level1_bytes != 0 ? level1_bytes : memtable_bytes * max_memtables;
}

Status EngineConfig::Validate() const {
  if (dir.empty()) return Status::InvalidArgument("directory not set");
  if (memtable_bytes == 0 || max_memtables == 0) return Status::InvalidArgument("memtable settings must be positive");
  if (levels < 2) return Status::InvalidArgument("levels must be at least 2");
  if (fanout == 0) return Status::InvalidArgument("fanout must be positive");
  if (!(scale_c >= 1.0)) return Status::InvalidArgument("scale_c must be >= 1.0");
  if (segment_count == 0 || segment_count > piece::kMaxSegments) {
    return Status::InvalidArgument("segment_count out of range");
  }
  if (sample_interval == 0 || page_size == 0 || l0_trigger == 0) {
    return Status::InvalidArgument("sample_interval, page_size and l0_trigger must be positive");
  }
  if (direct_io && page_size % kIoAlignment != 0) {
    return Status::InvalidArgument("direct I/O needs a page size that is a multiple of 4096");
  }
  if (!(level_ratio >= 1.0)) return Status::InvalidArgument("level_ratio must be >= 1");
  if (!(invalid_ratio > 0.0 && invalid_ratio <= 1.0)) return Status::InvalidArgument("invalid_ratio out of (0, 1]");
  if (mode == EngineMode::kSingleTier && max_pieces > 2) {
    return Status::InvalidArgument("single_tier mode allows at most 2 pieces per TPH");
  }
  return Status::OK();
}

// Immutable snapshot of everything a reader needs.
struct Engine::Version {
  std::shared_ptr<MemTable> mem;
  std::vector<std::shared_ptr<MemTable>> imms;  // oldest first
  std::vector<std::shared_ptr<const Tph>> l0;   // oldest first
  std::vector<std::map<uint64_t, std::shared_ptr<const Tph>>> levels;  // [0] unused
};

struct Engine::Edit {
  size_t drop_imms = 0;
  size_t drop_l0 = 0;
  std::vector<std::shared_ptr<const Tph>> add_l0;
  std::vector<std::pair<uint32_t, uint64_t>> remove;
  std::vector<std::shared_ptr<const Tph>> put;
  std::vector<std::string> obsolete_files;
  std::vector<std::string> obsolete_dirs;
};

Engine::Engine(const EngineConfig& config)
    : config_(config), layout_(config.fanout), stats_(std::make_shared<IoStats>()) {}

Engine::~Engine() { (void)Close(); }

Result<std::unique_ptr<Engine>> Engine::Open(const EngineConfig& config) {
  TPHKV_RETURN_IF_ERROR(config.Validate());
  std::unique_ptr<Engine> e(new Engine(config));
  Status s = e->Recover();
  if (!s.ok()) {
    e->closed_ = true;
    if (e->lock_fd_ >= 0) ::close(e->lock_fd_);
    e->lock_fd_ = -1;
    return s;
  }
  e->bg_thread_ = std::thread([p = e.get()] { p->BackgroundLoop(); });
  return e;
}

std::string Engine::TphPath(uint64_t tph_id) const { return config_.dir + "/tph/" + TphDirName(tph_id); }

uint64_t Engine::LevelBudget(uint32_t level) const {
  return static_cast<uint64_t>(static_cast<double>(config_.EffectiveLevel1Bytes()) *
                               std::pow(config_.level_ratio, level - 1));
}

void Engine::Hook(std::string_view point) const {
  if (config_.test_hook) config_.test_hook(point);
}

std::shared_ptr<const Engine::Version> Engine::current() const {
  std::lock_guard<std::mutex> l(version_mu_);
  return version_;
}

Status Engine::Recover() {
  std::error_code ec;
  fs::create_directories(config_.dir + "/wal", ec);
  if (!ec) fs::create_directories(config_.dir + "/tph", ec);
  if (ec) return Status::IoError("create " + config_.dir + ": " + ec.message());

  lock_fd_ = ::open((config_.dir + "/LOCK").c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (lock_fd_ < 0) return Status::IoError("open LOCK");
  if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    return Status(Code::kLockHeld, "directory is in use: " + config_.dir);
  }

  TPHKV_ASSIGN_OR_RETURN(std::optional<ManifestState> loaded, LoadLatestManifest(config_.dir, stats_));
  if (loaded) {
    manifest_ = std::move(*loaded);
    nlohmann::json echo = ConfigEcho(config_);
    if (manifest_.config != echo) {
      return Status::InvalidArgument("store was created with " + manifest_.config.dump() + ", opened with " +
                                     echo.dump());
    }
  } else {
    manifest_.hash_seed = config_.hash_seed;
    manifest_.config = ConfigEcho(config_);
  }
  hash_seed_ = manifest_.hash_seed;
  TPHKV_RETURN_IF_ERROR(RemoveOrphans());

  auto v = std::make_shared<Version>();
  v->levels.resize(config_.EffectiveLevels());
  for (const TphMeta& meta : manifest_.tphs) {
    if (meta.level >= v->levels.size()) return Status(Code::kCorruptManifest, "TPH level beyond configured levels");
    TPHKV_ASSIGN_OR_RETURN(auto t, Tph::Load(meta, TphPath(meta.tph_id), hash_seed_, config_.direct_io, stats_));
    if (meta.level == 0) {
      v->l0.push_back(std::move(t));
    } else {
      v->levels[meta.level][meta.index] = std::move(t);
    }
  }
  if (config_.memory_cap_bytes > 0) {
    uint64_t resident = 0;
    for (const auto& t : v->l0) resident += t->ResidentBytes();
    for (const auto& lvl : v->levels) {
      for (const auto& [i, t] : lvl) resident += t->ResidentBytes();
    }
    if (resident > config_.memory_cap_bytes) {
      return Status(Code::kBudgetExceeded, "resident index needs " + std::to_string(resident) + " bytes, cap is " +
                                               std::to_string(config_.memory_cap_bytes));
    }
  }

  // Replay surviving logs, oldest first.
  std::vector<uint64_t> gens;
  for (const auto& ent : fs::directory_iterator(config_.dir + "/wal", ec)) {
    auto g = ParseNumbered(ent.path().filename().string(), ".log");
    if (g && *g >= manifest_.log_number) gens.push_back(*g);
  }
  std::sort(gens.begin(), gens.end());
  uint64_t last_seq = manifest_.last_sequence;
  std::shared_ptr<MemTable> replayed;
  if (!gens.empty()) {
    replayed = std::make_shared<MemTable>(gens.front());
    for (uint64_t g : gens) {
      TPHKV_RETURN_IF_ERROR(ReplayWal(config_.dir + "/wal/" + WalFileName(g), stats_,
                                      [&](uint64_t seq, ValueKind kind, std::string_view k, std::string_view val) {
                                        replayed->Add(seq, kind, k, val);
                                        last_seq = std::max(last_seq, seq);
                                      }));
    }
    manifest_.next_file_number = std::max(manifest_.next_file_number, gens.back() + 1);
  }
  last_sequence_ = last_seq;

  TPHKV_RETURN_IF_ERROR(NewWal(&v->mem));
  if (replayed && !replayed->empty()) v->imms.push_back(replayed);
  version_ = v;
  if (!v->imms.empty()) {
    TPHKV_RETURN_IF_ERROR(FlushImmutables(1));
  } else if (!gens.empty()) {
    // Logs held nothing; retire them.
    for (uint64_t g : gens) fs::remove(config_.dir + "/wal/" + WalFileName(g), ec);
  }
  return Status::OK();
}

Status Engine::RemoveOrphans() {
  std::error_code ec;
  std::map<uint64_t, std::set<uint64_t>> live;
  for (const TphMeta& m : manifest_.tphs) live[m.tph_id].insert(m.piece_seqs.begin(), m.piece_seqs.end());
  for (const auto& ent : fs::directory_iterator(config_.dir + "/tph", ec)) {
    auto id = ParseNumbered(ent.path().filename().string(), "");
    auto it = id ? live.find(*id) : live.end();
    if (it == live.end()) {
      fs::remove_all(ent.path(), ec);
      continue;
    }
    for (const auto& f : fs::directory_iterator(ent.path(), ec)) {
      auto seq = ParseNumbered(f.path().filename().string(), ".ph");
      if (!seq || !it->second.count(*seq)) fs::remove(f.path(), ec);
    }
  }
  for (const auto& ent : fs::directory_iterator(config_.dir, ec)) {
    std::string name = ent.path().filename().string();
    if (name.rfind("MANIFEST-", 0) == 0 && name.size() > 4 && name.compare(name.size() - 4, 4, ".tmp") == 0) {
      fs::remove(ent.path(), ec);
    }
  }
  for (const auto& ent : fs::directory_iterator(config_.dir + "/wal", ec)) {
    auto g = ParseNumbered(ent.path().filename().string(), ".log");
    if (g && *g < manifest_.log_number) fs::remove(ent.path(), ec);
  }
  return Status::OK();
}

Status Engine::NewWal(std::shared_ptr<MemTable>* mem) {
  uint64_t gen = manifest_.next_file_number++;
  TPHKV_ASSIGN_OR_RETURN(auto w, WalWriter::Create(config_.dir + "/wal/" + WalFileName(gen), stats_));
  if (wal_) {
    if (config_.wal_sync != WalSyncPolicy::kNone) TPHKV_RETURN_IF_ERROR(wal_->Sync());
    TPHKV_RETURN_IF_ERROR(wal_->Close());
  }
  wal_ = std::move(w);
  *mem = std::make_shared<MemTable>(gen);
  last_sync_ms_ = NowMs();
  return Status::OK();
}

Status Engine::Put(std::string_view key, std::string_view value) { return Write(ValueKind::kValue, key, value); }

Status Engine::Delete(std::string_view key) { return Write(ValueKind::kTombstone, key, {}); }

Status Engine::Write(ValueKind kind, std::string_view key, std::string_view value) {
  if (key.empty()) return Status::InvalidArgument("empty key");
  std::lock_guard<std::mutex> w(write_mu_);
  if (closed_) return Status(Code::kStopped, "engine closed");
  {
    std::unique_lock<std::mutex> l(mu_);
    if (!bg_error_.ok()) return bg_error_;
    TPHKV_RETURN_IF_ERROR(MakeRoomLocked(l));
  }
  const uint64_t seq = ++last_sequence_;
  bool sync = config_.wal_sync == WalSyncPolicy::kPerWrite;
  if (config_.wal_sync == WalSyncPolicy::kInterval) {
    uint64_t now = NowMs();
    if (now - last_sync_ms_ >= config_.wal_sync_interval_ms) {
      sync = true;
      last_sync_ms_ = now;
    }
  }
  TPHKV_RETURN_IF_ERROR(wal_->Add(seq, kind, key, value, sync));
  current()->mem->Add(seq, kind, key, value);
  Bump(stats_->puts, 1);
  Bump(stats_->user_bytes_written, key.size() + value.size());
  return Status::OK();
}

Status Engine::MakeRoomLocked(std::unique_lock<std::mutex>& l) {
  if (current()->mem->ApproximateBytes() < config_.memtable_bytes) return Status::OK();
  const size_t limit = std::max<size_t>(1, config_.max_memtables - 1);
  done_cv_.wait(l, [&] { return current()->imms.size() < limit || !bg_error_.ok() || shutting_down_; });
  if (!bg_error_.ok()) return bg_error_;
  if (shutting_down_) return Status(Code::kStopped, "engine closing");
  auto v = std::make_shared<Version>(*current());
  v->imms.push_back(v->mem);
  TPHKV_RETURN_IF_ERROR(NewWal(&v->mem));
  {
    std::lock_guard<std::mutex> g(version_mu_);
    version_ = v;
  }
  bg_cv_.notify_all();
  return Status::OK();
}

Status Engine::Get(std::string_view key, std::string* value) {
  Bump(stats_->gets, 1);
  auto v = current();
  auto found = [&] {
    Bump(stats_->user_bytes_read, key.size() + value->size());
    return Status::OK();
  };
  LookupState st = v->mem->Get(key, value);
  for (auto it = v->imms.rbegin(); st == LookupState::kNotFound && it != v->imms.rend(); ++it) {
    st = (*it)->Get(key, value);
  }
  if (st == LookupState::kFound) return found();
  if (st == LookupState::kDeleted) return Status::NotFound();

  const KeyDigest digest = DigestKey(key, hash_seed_);
  for (auto it = v->l0.rbegin(); it != v->l0.rend(); ++it) {
    TPHKV_RETURN_IF_ERROR((*it)->Get(key, digest, &st, value));
    if (st == LookupState::kFound) return found();
    if (st == LookupState::kDeleted) return Status::NotFound();
  }
  const uint32_t sk = digest.search_key();
  for (uint32_t level = 1; level < v->levels.size(); ++level) {
    auto it = v->levels[level].find(layout_.IndexOf(level, sk));
    if (it == v->levels[level].end()) continue;
    TPHKV_RETURN_IF_ERROR(it->second->Get(key, digest, &st, value));
    if (st == LookupState::kFound) return found();
    if (st == LookupState::kDeleted) return Status::NotFound();
  }
  return Status::NotFound();
}

Status Engine::Flush() {
  std::lock_guard<std::mutex> w(write_mu_);
  if (closed_) return Status(Code::kStopped, "engine closed");
  std::unique_lock<std::mutex> l(mu_);
  if (!bg_error_.ok()) return bg_error_;
  if (!current()->mem->empty()) {
    auto v = std::make_shared<Version>(*current());
    v->imms.push_back(v->mem);
    TPHKV_RETURN_IF_ERROR(NewWal(&v->mem));
    std::lock_guard<std::mutex> g(version_mu_);
    version_ = v;
  }
  force_flush_ = true;
  bg_cv_.notify_all();
  done_cv_.wait(l, [&] { return (current()->imms.empty() && !bg_active_) || !bg_error_.ok() || shutting_down_; });
  force_flush_ = false;
  return bg_error_;
}

Status Engine::Compact() {
  TPHKV_RETURN_IF_ERROR(Flush());
  std::unique_lock<std::mutex> l(mu_);
  compact_requested_ = true;
  bg_cv_.notify_all();
  done_cv_.wait(l, [&] { return (!compact_requested_ && !bg_active_) || !bg_error_.ok() || shutting_down_; });
  compact_requested_ = false;
  return bg_error_;
}

Status Engine::Close() {
  if (closed_) return Status::OK();
  {
    std::lock_guard<std::mutex> l(mu_);
    shutting_down_ = true;
  }
  bg_cv_.notify_all();
  done_cv_.notify_all();
  if (bg_thread_.joinable()) bg_thread_.join();
  std::lock_guard<std::mutex> w(write_mu_);
  Status s;
  if (wal_) {
    if (config_.wal_sync != WalSyncPolicy::kNone) s = wal_->Sync();
    Status c = wal_->Close();
    if (s.ok()) s = c;
    wal_.reset();
  }
  if (lock_fd_ >= 0) ::close(lock_fd_);
  lock_fd_ = -1;
  closed_ = true;
  return s;
}

bool Engine::HasWorkLocked() const {
  auto v = current();
  if (compact_requested_) return true;
  if (v->imms.empty()) return false;
  if (force_flush_ || config_.mode != EngineMode::kOneLevel) return true;
  return v->imms.size() >= std::max<size_t>(1, config_.max_memtables - 1);
}

void Engine::BackgroundLoop() {
  std::unique_lock<std::mutex> l(mu_);
  while (true) {
    bg_cv_.wait(l, [&] { return shutting_down_ || (bg_error_.ok() && HasWorkLocked()); });
    if (shutting_down_) break;
    bg_active_ = true;
    l.unlock();
    bool did_work = false;
    Status s = RunOneStep(&did_work);
    l.lock();
    bg_active_ = false;
    if (!s.ok() && bg_error_.ok()) bg_error_ = s;
    done_cv_.notify_all();
  }
}

Status Engine::RunOneStep(bool* did_work) {
  size_t count = 0;
  bool compact = false;
  {
    std::lock_guard<std::mutex> l(mu_);
    auto v = current();
    if (!v->imms.empty()) {
      count = config_.mode == EngineMode::kOneLevel ? v->imms.size() : 1;
    } else {
      compact = compact_requested_;
    }
  }
  if (count > 0) {
    *did_work = true;
    TPHKV_RETURN_IF_ERROR(FlushImmutables(count));
    return CompactLevels(/*to_bottom=*/false, did_work);
  }
  if (compact) {
    TPHKV_RETURN_IF_ERROR(CompactLevels(/*to_bottom=*/true, did_work));
    std::lock_guard<std::mutex> l(mu_);
    compact_requested_ = false;
  }
  return Status::OK();
}

MergeOptions Engine::BaseMergeOptions() const {
  MergeOptions o;
  o.hash_seed = hash_seed_;
  o.segment_count = config_.segment_count;
  o.page_size = config_.page_size;
  o.sample_interval = config_.sample_interval;
  o.max_pieces = config_.EffectiveMaxPieces();
  o.invalid_ratio_threshold = config_.invalid_ratio;
  o.direct_io = config_.direct_io;
  o.stats = stats_;
  o.cphash.scale_c = config_.scale_c;
  return o;
}

bool Engine::IsBottom(const Version& v, uint32_t level, uint64_t index) const {
  auto [lo, hi] = level == 0 ? std::pair<uint64_t, uint64_t>{0, HashRangeLayout::kSpace} : layout_.Range(level, index);
  for (uint32_t d = level + 1; d < v.levels.size(); ++d) {
    for (const auto& [j, t] : v.levels[d]) {
      auto [clo, chi] = layout_.Range(d, j);
      if (clo < hi && lo < chi) return false;
    }
  }
  return true;
}

Result<TphMeta> Engine::MergeInto(const std::shared_ptr<const Tph>& base, uint32_t level, uint64_t index,
                                  std::span<const Record> delta, bool bottom, Edit* edit) {
  MergeOptions o = BaseMergeOptions();
  {
    std::lock_guard<std::mutex> l(mu_);
    o.tph_id = base ? base->meta().tph_id : manifest_.next_tph_id++;
    o.new_piece_seq = manifest_.next_file_number++;
  }
  o.tph_dir = TphPath(o.tph_id);
  o.level = level;
  o.index = static_cast<uint32_t>(index);
  if (level > 0) std::tie(o.search_lo, o.search_hi) = layout_.Range(level, index);
  o.bottom = bottom;
  std::error_code ec;
  fs::create_directories(o.tph_dir, ec);
  if (ec) return Status::IoError("create " + o.tph_dir + ": " + ec.message());

  TPHKV_ASSIGN_OR_RETURN(MergeResult r, MergeIntoTph(base.get(), delta, o));
  for (uint64_t seq : r.obsolete_pieces) edit->obsolete_files.push_back(o.tph_dir + "/" + PieceFileName(seq));
  if (r.meta.empty()) {
    if (base && level > 0) edit->remove.emplace_back(level, index);
    edit->obsolete_dirs.push_back(o.tph_dir);
    return r.meta;
  }
  TPHKV_ASSIGN_OR_RETURN(auto t, Tph::Load(r.meta, o.tph_dir, hash_seed_, config_.direct_io, stats_));
  if (level == 0) {
    edit->add_l0.push_back(std::move(t));
  } else {
    edit->put.push_back(std::move(t));
  }
  return r.meta;
}

Status Engine::FlushImmutables(size_t count) {
  auto v = current();
  count = std::min(count, v->imms.size());
  std::vector<std::vector<Record>> runs;
  for (size_t i = count; i-- > 0;) runs.push_back(v->imms[i]->SortedRecords());
  std::vector<Record> records = MergeRuns(std::move(runs));

  Edit edit;
  edit.drop_imms = count;
  if (config_.mode == EngineMode::kOneLevel) {
    for (MergeTask& task : PlanChildTasks(layout_, 0, 0, std::move(records), hash_seed_)) {
      auto it = v->levels[1].find(task.index);
      auto base = it == v->levels[1].end() ? nullptr : it->second;
      TPHKV_RETURN_IF_ERROR(MergeInto(base, 1, task.index, task.delta, IsBottom(*v, 1, task.index), &edit).status());
    }
  } else {
    bool bottom = v->l0.empty() && IsBottom(*v, 0, 0);
    TPHKV_RETURN_IF_ERROR(MergeInto(nullptr, 0, 0, records, bottom, &edit).status());
  }
  return ApplyEdit(edit);
}

Status Engine::CompactLevels(bool to_bottom, bool* did_work) {
  if (config_.mode == EngineMode::kOneLevel) return Status::OK();
  const uint32_t last = config_.EffectiveLevels() - 1;
  while (true) {
    {
      std::lock_guard<std::mutex> l(mu_);
      if (shutting_down_) return Status::OK();
    }
    auto v = current();
    if (v->l0.size() >= config_.l0_trigger || (to_bottom && !v->l0.empty())) {
      *did_work = true;
      TPHKV_RETURN_IF_ERROR(MergeLevel0());
      continue;
    }
    bool pushed = false;
    for (uint32_t level = 1; level < last && !pushed; ++level) {
      const auto& tphs = v->levels[level];
      if (tphs.empty()) continue;
      uint64_t bytes = 0;
      uint64_t largest_index = tphs.begin()->first;
      uint64_t largest_bytes = 0;
      for (const auto& [i, t] : tphs) {
        bytes += t->meta().live_bytes;
        if (t->meta().live_bytes > largest_bytes) {
          largest_bytes = t->meta().live_bytes;
          largest_index = i;
        }
      }
      if (to_bottom || bytes > LevelBudget(level)) {
        *did_work = true;
        TPHKV_RETURN_IF_ERROR(PushDown(level, largest_index));
        pushed = true;
      }
    }
    if (!pushed) return Status::OK();
  }
}

Status Engine::MergeLevel0() {
  auto v = current();
  std::vector<std::vector<Record>> runs;
  Edit edit;
  edit.drop_l0 = v->l0.size();
  for (auto it = v->l0.rbegin(); it != v->l0.rend(); ++it) {
    TPHKV_ASSIGN_OR_RETURN(auto recs, ReadCurrentRecords(**it, IoPurpose::kCompaction));
    runs.push_back(std::move(recs));
    edit.obsolete_dirs.push_back(TphPath((*it)->meta().tph_id));
  }
  std::vector<Record> records = MergeRuns(std::move(runs));
  for (MergeTask& task : PlanChildTasks(layout_, 0, 0, std::move(records), hash_seed_)) {
    auto it = v->levels[1].find(task.index);
    auto base = it == v->levels[1].end() ? nullptr : it->second;
    TPHKV_RETURN_IF_ERROR(MergeInto(base, 1, task.index, task.delta, IsBottom(*v, 1, task.index), &edit).status());
  }
  return ApplyEdit(edit);
}

Status Engine::PushDown(uint32_t level, uint64_t index) {
  auto v = current();
  const auto& src = v->levels[level].at(index);
  TPHKV_ASSIGN_OR_RETURN(auto records, ReadCurrentRecords(*src, IoPurpose::kCompaction));
  Edit edit;
  edit.remove.emplace_back(level, index);
  edit.obsolete_dirs.push_back(TphPath(src->meta().tph_id));
  const uint32_t child_level = level + 1;
  for (MergeTask& task : PlanChildTasks(layout_, level, index, std::move(records), hash_seed_)) {
    auto it = v->levels[child_level].find(task.index);
    auto base = it == v->levels[child_level].end() ? nullptr : it->second;
    bool bottom = IsBottom(*v, child_level, task.index);
    TPHKV_RETURN_IF_ERROR(MergeInto(base, child_level, task.index, task.delta, bottom, &edit).status());
  }
  return ApplyEdit(edit);
}

Status Engine::ApplyEdit(Edit& edit) {
  Hook("before_manifest_commit");
  uint64_t log_number;
  {
    std::lock_guard<std::mutex> l(mu_);
    auto v = std::make_shared<Version>(*current());
    v->imms.erase(v->imms.begin(), v->imms.begin() + edit.drop_imms);
    v->l0.erase(v->l0.begin(), v->l0.begin() + edit.drop_l0);
    for (auto& t : edit.add_l0) v->l0.push_back(t);
    for (auto [level, index] : edit.remove) v->levels[level].erase(index);
    for (auto& t : edit.put) v->levels[t->meta().level][t->meta().index] = t;

    ManifestState m = manifest_;
    m.version += 1;
    m.last_sequence = last_sequence_;
    log_number = v->mem->wal_gen();
    for (const auto& imm : v->imms) log_number = std::min(log_number, imm->wal_gen());
    m.log_number = log_number;
    m.tphs.clear();
    for (const auto& t : v->l0) m.tphs.push_back(t->meta());
    for (const auto& lvl : v->levels) {
      for (const auto& [i, t] : lvl) m.tphs.push_back(t->meta());
    }
    TPHKV_RETURN_IF_ERROR(CommitManifest(config_.dir, m, stats_));
    manifest_ = std::move(m);
    std::lock_guard<std::mutex> g(version_mu_);
    version_ = v;
  }
  done_cv_.notify_all();
  Hook("after_manifest_commit");

  std::error_code ec;
  for (const auto& f : edit.obsolete_files) fs::remove(f, ec);
  for (const auto& d : edit.obsolete_dirs) fs::remove_all(d, ec);
  for (const auto& ent : fs::directory_iterator(config_.dir + "/wal", ec)) {
    auto g = ParseNumbered(ent.path().filename().string(), ".log");
    if (g && *g < log_number) fs::remove(ent.path(), ec);
  }
  return Status::OK();
}

EngineSummary Engine::Summary() const {
  auto v = current();
  EngineSummary s;
  s.levels.resize(v->levels.size());
  auto add = [&](uint32_t level, const Tph& t) {
    LevelSummary& ls = s.levels[level];
    ls.tphs += 1;
    ls.pieces += t.pieces().size();
    ls.max_pieces_per_tph = std::max<uint32_t>(ls.max_pieces_per_tph, t.pieces().size());
    ls.live_keys += t.meta().live_keys;
    ls.live_bytes += t.meta().live_bytes;
    ls.file_bytes += t.meta().file_bytes;
    s.resident_index_bytes += t.ResidentBytes();
    s.indexed_keys += t.meta().live_keys;
  };
  for (uint32_t l = 0; l < s.levels.size(); ++l) s.levels[l].level = l;
  for (const auto& t : v->l0) add(0, *t);
  for (uint32_t l = 1; l < v->levels.size(); ++l) {
    for (const auto& [i, t] : v->levels[l]) add(l, *t);
  }
  s.memtable_entries = v->mem->size();
  for (const auto& m : v->imms) s.memtable_entries += m->size();
  {
    std::lock_guard<std::mutex> l(mu_);
    s.manifest_version = manifest_.version;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Iteration

struct EngineIterator::Source {
  virtual ~Source() = default;
  virtual void Seek(std::string_view target) = 0;
  virtual void Next() = 0;
  virtual bool Valid() const = 0;
  virtual std::string_view key() const = 0;
  virtual std::string_view value() const = 0;
  virtual bool tombstone() const = 0;
  virtual Status status() const { return Status::OK(); }
  size_t rank = 0;  // lower is newer
};

namespace {

class MemSource : public EngineIterator::Source {
 public:
  explicit MemSource(std::shared_ptr<MemTable> mem) : mem_(std::move(mem)) {}
  void Seek(std::string_view target) override { valid_ = mem_->SeekCopy(target, true, &key_, &entry_); }
  void Next() override {
    std::string cur = std::move(key_);
    valid_ = mem_->SeekCopy(cur, false, &key_, &entry_);
  }
  bool Valid() const override { return valid_; }
  std::string_view key() const override { return key_; }
  std::string_view value() const override { return entry_.value; }
  bool tombstone() const override { return entry_.kind == ValueKind::kTombstone; }

 private:
  std::shared_ptr<MemTable> mem_;
  bool valid_ = false;
  std::string key_;
  MemTable::Entry entry_;
};

class TphSource : public EngineIterator::Source {
 public:
  explicit TphSource(std::unique_ptr<TphIterator> it) : it_(std::move(it)) {}
  void Seek(std::string_view target) override {
    if (target.empty()) {
      it_->SeekToFirst();
    } else {
      it_->Seek(target);
    }
  }
  void Next() override { it_->Next(); }
  bool Valid() const override { return it_->Valid(); }
  std::string_view key() const override { return it_->key(); }
  std::string_view value() const override { return it_->value(); }
  bool tombstone() const override { return it_->kind() == ValueKind::kTombstone; }
  Status status() const override { return it_->status(); }

 private:
  std::unique_ptr<TphIterator> it_;
};

}  // namespace

std::unique_ptr<EngineIterator> Engine::NewIterator(std::string_view start, std::string_view end) {
  auto v = current();
  std::vector<std::unique_ptr<EngineIterator::Source>> sources;
  size_t rank = 0;
  auto add = [&](std::unique_ptr<EngineIterator::Source> s) {
    s->rank = rank;
    sources.push_back(std::move(s));
  };
  add(std::make_unique<MemSource>(v->mem));
  ++rank;
  for (auto it = v->imms.rbegin(); it != v->imms.rend(); ++it, ++rank) add(std::make_unique<MemSource>(*it));
  for (auto it = v->l0.rbegin(); it != v->l0.rend(); ++it, ++rank) {
    add(std::make_unique<TphSource>((*it)->NewIterator(/*include_tombstones=*/true)));
  }
  // TPHs within one level hold disjoint keys, so they share a rank.
  for (uint32_t level = 1; level < v->levels.size(); ++level, ++rank) {
    for (const auto& [i, t] : v->levels[level]) {
      add(std::make_unique<TphSource>(t->NewIterator(/*include_tombstones=*/true)));
    }
  }
  return std::unique_ptr<EngineIterator>(
      new EngineIterator(v, std::move(sources), std::string(start), std::string(end), stats_));
}

EngineIterator::EngineIterator(std::shared_ptr<const void> version, std::vector<std::unique_ptr<Source>> sources,
                               std::string start, std::string end, std::shared_ptr<IoStats> stats)
    : version_(std::move(version)),
      sources_(std::move(sources)),
      start_(std::move(start)),
      end_(std::move(end)),
      stats_(std::move(stats)) {}

EngineIterator::~EngineIterator() = default;

namespace {

// Heap order: smallest key on top, newest source first among equal keys.
struct HeapAfter {
  const std::vector<std::unique_ptr<EngineIterator::Source>>* s;
  bool operator()(size_t a, size_t b) const {
    int c = (*s)[a]->key().compare((*s)[b]->key());
    return c != 0 ? c > 0 : (*s)[a]->rank > (*s)[b]->rank;
  }
};

}  // namespace

void EngineIterator::SeekToFirst() { Seek(start_); }

void EngineIterator::Seek(std::string_view target) {
  std::string t = std::string(std::max(target, std::string_view(start_)));
  for (auto& s : sources_) s->Seek(t);
  Rebuild();
  Settle();
}

void EngineIterator::Rebuild() {
  heap_.clear();
  status_ = Status::OK();
  for (size_t i = 0; i < sources_.size(); ++i) {
    if (!sources_[i]->status().ok()) {
      status_ = sources_[i]->status();
      return;
    }
    if (sources_[i]->Valid()) heap_.push_back(i);
  }
  std::make_heap(heap_.begin(), heap_.end(), HeapAfter{&sources_});
}

void EngineIterator::AdvanceKey(const std::string& k) {
  HeapAfter cmp{&sources_};
  while (!heap_.empty() && sources_[heap_.front()]->key() == k) {
    std::pop_heap(heap_.begin(), heap_.end(), cmp);
    size_t i = heap_.back();
    heap_.pop_back();
    sources_[i]->Next();
    if (!sources_[i]->status().ok()) {
      status_ = sources_[i]->status();
      return;
    }
    if (sources_[i]->Valid()) {
      heap_.push_back(i);
      std::push_heap(heap_.begin(), heap_.end(), cmp);
    }
  }
}

void EngineIterator::Settle() {
  valid_ = false;
  while (status_.ok() && !heap_.empty()) {
    const Source& top = *sources_[heap_.front()];
    if (!end_.empty() && top.key() >= end_) return;
    if (top.tombstone()) {
      AdvanceKey(std::string(top.key()));
      continue;
    }
    key_.assign(top.key());
    value_.assign(top.value());
    valid_ = true;
    Bump(stats_->user_bytes_read, key_.size() + value_.size());
    return;
  }
}

void EngineIterator::Next() {
  if (!valid_) return;
  AdvanceKey(key_);
  Settle();
}

}  // namespace tphkv
