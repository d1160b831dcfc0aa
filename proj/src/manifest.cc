#include "tphkv/manifest.h"

#include <cinttypes>
#include <cstdio>
#include <filesystem>

#include "tphkv/crc32c.h"

namespace tphkv {
namespace {

constexpr char kPrefix[] = "MANIFEST-";

nlohmann::json TphToJson(const TphMeta& t) {
  return {{"id", t.tph_id},           {"level", t.level},
          {"index", t.index},         {"lo", t.search_lo},
          {"hi", t.search_hi},        {"pieces", t.piece_seqs},
          {"live_keys", t.live_keys}, {"live_bytes", t.live_bytes},
          {"file_bytes", t.file_bytes}};
}

TphMeta TphFromJson(const nlohmann::json& j) {
  TphMeta t;
  t.tph_id = j.at("id").get<uint64_t>();
  t.level = j.at("level").get<uint32_t>();
  t.index = j.at("index").get<uint32_t>();
  t.search_lo = j.at("lo").get<uint64_t>();
  t.search_hi = j.at("hi").get<uint64_t>();
  t.piece_seqs = j.at("pieces").get<std::vector<uint64_t>>();
  t.live_keys = j.at("live_keys").get<uint64_t>();
  t.live_bytes = j.at("live_bytes").get<uint64_t>();
  t.file_bytes = j.at("file_bytes").get<uint64_t>();
  return t;
}

std::optional<uint64_t> ParseManifestName(const std::string& name) {
  if (name.rfind(kPrefix, 0) != 0) return std::nullopt;
  std::string num = name.substr(sizeof(kPrefix) - 1);
  if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  return std::stoull(num);
}

}  // namespace

bool ManifestState::operator==(const ManifestState& o) const {
  return EncodeManifest(*this) == EncodeManifest(o);
}

std::string ManifestFileName(uint64_t version) { return kPrefix + std::to_string(version); }

std::string EncodeManifest(const ManifestState& s) {
  nlohmann::json j;
  j["version"] = s.version;
  j["next_file_number"] = s.next_file_number;
  j["next_tph_id"] = s.next_tph_id;
  j["log_number"] = s.log_number;
  j["last_sequence"] = s.last_sequence;
  j["hash_seed"] = s.hash_seed;
  j["config"] = s.config.is_null() ? nlohmann::json::object() : s.config;
  j["tphs"] = nlohmann::json::array();
  for (const TphMeta& t : s.tphs) j["tphs"].push_back(TphToJson(t));
  std::string text = j.dump(1);
  char crc[32];
  std::snprintf(crc, sizeof(crc), "\ncrc32c=%08" PRIx32 "\n", crc32c::Value(text));
  return text + crc;
}

Result<ManifestState> DecodeManifest(std::string_view text) {
  size_t pos = text.rfind("\ncrc32c=");
  if (pos == std::string_view::npos) return Status(Code::kCorruptManifest, "missing checksum line");
  std::string_view body = text.substr(0, pos);
  std::string crc_hex(text.substr(pos + 8));
  while (!crc_hex.empty() && (crc_hex.back() == '\n' || crc_hex.back() == '\r')) crc_hex.pop_back();
  uint32_t expect = 0;
  try {
    size_t used = 0;
    expect = static_cast<uint32_t>(std::stoul(crc_hex, &used, 16));
    if (used != crc_hex.size()) return Status(Code::kCorruptManifest, "bad checksum line");
  } catch (...) {
    return Status(Code::kCorruptManifest, "bad checksum line");
  }
  if (crc32c::Value(body) != expect) return Status(Code::kCorruptManifest, "manifest checksum mismatch");
  try {
    nlohmann::json j = nlohmann::json::parse(body);
    ManifestState s;
    s.version = j.at("version").get<uint64_t>();
    s.next_file_number = j.at("next_file_number").get<uint64_t>();
    s.next_tph_id = j.at("next_tph_id").get<uint64_t>();
    s.log_number = j.at("log_number").get<uint64_t>();
    s.last_sequence = j.at("last_sequence").get<uint64_t>();
    s.hash_seed = j.at("hash_seed").get<uint64_t>();
    s.config = j.at("config");
    for (const auto& t : j.at("tphs")) s.tphs.push_back(TphFromJson(t));
    return s;
  } catch (const std::exception& e) {
    return Status(Code::kCorruptManifest, std::string("manifest parse: ") + e.what());
  }
}

Status CommitManifest(const std::string& dir, const ManifestState& state, std::shared_ptr<IoStats> stats) {
  const std::string name = ManifestFileName(state.version);
  const std::string tmp = dir + "/" + name + ".tmp";
  {
    TPHKV_ASSIGN_OR_RETURN(auto f, WritableFile::Create(tmp, false, stats, WritePurpose::kManifest));
    TPHKV_RETURN_IF_ERROR(f->Append(EncodeManifest(state)));
    TPHKV_RETURN_IF_ERROR(f->Close(/*sync=*/true));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, dir + "/" + name, ec);
  if (ec) return Status::IoError("rename manifest: " + ec.message());
  TPHKV_RETURN_IF_ERROR(SyncDir(dir));
  for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
    auto v = ParseManifestName(e.path().filename().string());
    if (v && *v < state.version) std::filesystem::remove(e.path(), ec);
  }
  return Status::OK();
}

Result<std::optional<ManifestState>> LoadLatestManifest(const std::string& dir, std::shared_ptr<IoStats> stats) {
  std::optional<uint64_t> best;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
    auto v = ParseManifestName(e.path().filename().string());
    if (v && (!best || *v > *best)) best = v;
  }
  if (ec) return Status::IoError("list " + dir + ": " + ec.message());
  if (!best) return std::optional<ManifestState>();
  std::string text;
  TPHKV_RETURN_IF_ERROR(ReadWholeFile(dir + "/" + ManifestFileName(*best), &text, std::move(stats)));
  TPHKV_ASSIGN_OR_RETURN(ManifestState s, DecodeManifest(text));
  if (s.version != *best) return Status(Code::kCorruptManifest, "manifest version does not match its name");
  return std::optional<ManifestState>(std::move(s));
}

}  // namespace tphkv
