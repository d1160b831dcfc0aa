// bench: run workloads against the engine, compare engine variants, and
// verify a store left behind by a run.
//
//   bench run --workload ycsb_a --num-keys 1000000 --mode leveled_hash_range --dir /tmp/db
//   bench compare --workload overwrite --variants leveled_hash_range:1,leveled_hash_range:2 --dir /tmp/cmp
//   bench verify --dir /tmp/db --seed 1

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tphkv/bench.h"

namespace {

using tphkv::EngineConfig;
using tphkv::bench::WorkloadSpec;

constexpr uint64_t kMaxKeys = 10'000'000;

struct Options {
  WorkloadSpec spec;
  EngineConfig engine;
  std::string mode = "leveled_hash_range";
  std::string distribution;
  std::string wal_sync = "none";
  double memtable_mib = 128;
  std::string json_out;
  std::string variants;
  bool quiet = false;
};

void AddWorkloadOptions(CLI::App* app, Options* o) {
  app->add_option("--workload", o->spec.name,
                  "fillrandom|readrandom|readwhilewriting|ycsb_a..ycsb_f|mixed|overwrite")
      ->required();
  app->add_option("--num-keys", o->spec.num_keys, "keys loaded before the measured phase")
      ->check(CLI::Range(uint64_t{1}, kMaxKeys));
  app->add_option("--key-size", o->spec.key_size, "key bytes");
  app->add_option("--value-size", o->spec.value_size, "value bytes");
  app->add_option("--ops", o->spec.op_count, "measured operations (default: num-keys)");
  app->add_option("--threads", o->spec.threads, "client threads");
  app->add_option("--read-fraction", o->spec.read_fraction, "read share for mixed / readwhilewriting");
  app->add_option("--distribution", o->distribution, "uniform|zipfian|latest");
  app->add_option("--seed", o->spec.seed, "workload seed");
  app->add_option("--rounds", o->spec.overwrite_rounds, "overwrite rounds");
  app->add_option("--scan-min", o->spec.scan_min);
  app->add_option("--scan-max", o->spec.scan_max);
}

void AddEngineOptions(CLI::App* app, Options* o) {
  EngineConfig& e = o->engine;
  app->add_option("--fanout", e.fanout, "hash-range fanout per level");
  app->add_option("--levels", e.levels, "levels including L0");
  app->add_option("--memtable-mib", o->memtable_mib, "memtable size in MiB");
  app->add_option("--max-memtables", e.max_memtables, "active plus immutable memtables");
  app->add_option("--max-pieces", e.max_pieces, "pieces per TPH before a full rebuild (0: mode default)");
  app->add_option("--segments", e.segment_count, "CPHash segments per piece");
  app->add_option("--sample-interval", e.sample_interval, "reverse-index sampling interval");
  app->add_option("--l0-trigger", e.l0_trigger, "L0 TPH count that triggers a merge");
  app->add_option("--level-ratio", e.level_ratio, "size ratio between levels");
  app->add_flag("--direct-io", e.direct_io, "O_DIRECT for table reads");
  app->add_option("--wal-sync", o->wal_sync, "per_write|interval|none");
  app->add_option("--json-out", o->json_out, "also write the JSON report here");
  app->add_flag("--quiet", o->quiet, "metrics and JSON only");
}

tphkv::Status Finish(Options* o) {
  if (!o->distribution.empty()) {
    TPHKV_ASSIGN_OR_RETURN(o->spec.distribution, tphkv::bench::ParseDistribution(o->distribution));
  }
  TPHKV_ASSIGN_OR_RETURN(o->engine.mode, tphkv::ParseEngineMode(o->mode));
  o->engine.memtable_bytes = static_cast<uint64_t>(o->memtable_mib * 1048576.0);
  if (o->wal_sync == "per_write") {
    o->engine.wal_sync = tphkv::WalSyncPolicy::kPerWrite;
  } else if (o->wal_sync == "interval") {
    o->engine.wal_sync = tphkv::WalSyncPolicy::kInterval;
  } else if (o->wal_sync == "none") {
    o->engine.wal_sync = tphkv::WalSyncPolicy::kNone;
  } else {
    return tphkv::Status::InvalidArgument("unknown wal sync policy: " + o->wal_sync);
  }
  return o->spec.Validate();
}

int Fail(const tphkv::Status& s) {
  std::cerr << "error: " << s.ToString() << "\n";
  return 1;
}

void Emit(const Options& o, const nlohmann::json& j) {
  std::cout << j.dump() << "\n";
  if (!o.json_out.empty()) std::ofstream(o.json_out) << j.dump(1) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TPH key-value engine benchmark"};
  app.require_subcommand(1);

  Options run_opts;
  CLI::App* run = app.add_subcommand("run", "run one workload against a fresh store");
  AddWorkloadOptions(run, &run_opts);
  AddEngineOptions(run, &run_opts);
  run->add_option("--mode", run_opts.mode, "leveled_hash_range|one_level|single_tier");
  run->add_option("--dir", run_opts.engine.dir, "store directory (must be empty or absent)")->required();

  Options cmp_opts;
  CLI::App* cmp = app.add_subcommand("compare", "run one workload under several engine variants");
  AddWorkloadOptions(cmp, &cmp_opts);
  AddEngineOptions(cmp, &cmp_opts);
  cmp->add_option("--variants", cmp_opts.variants, "comma list of <mode>[:fanout]")->required();
  cmp->add_option("--dir", cmp_opts.engine.dir, "base directory; one subdirectory per variant")->required();

  std::string verify_dir;
  uint64_t verify_seed = 1;
  CLI::App* verify = app.add_subcommand("verify", "check a store against its regenerated contents");
  verify->add_option("--dir", verify_dir, "store directory written by bench run")->required();
  verify->add_option("--seed", verify_seed, "workload seed")->required();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    if (tphkv::Status s = Finish(&run_opts); !s.ok()) return Fail(s);
    auto report = tphkv::bench::Run(run_opts.spec, run_opts.engine);
    if (!report.ok()) return Fail(report.status());
    report->variant = std::string(tphkv::EngineModeName(run_opts.engine.mode));
    if (!run_opts.quiet) report->WriteText(std::cout);
    report->WriteMetrics(std::cout);
    Emit(run_opts, report->ToJson());
    return 0;
  }

  if (cmp->parsed()) {
    if (tphkv::Status s = Finish(&cmp_opts); !s.ok()) return Fail(s);
    std::vector<tphkv::bench::Variant> variants;
    std::stringstream ss(cmp_opts.variants);
    for (std::string item; std::getline(ss, item, ',');) {
      auto v = tphkv::bench::ParseVariant(item, cmp_opts.engine);
      if (!v.ok()) return Fail(v.status());
      variants.push_back(std::move(*v));
    }
    auto reports = tphkv::bench::Compare(cmp_opts.spec, variants, cmp_opts.engine.dir);
    if (!reports.ok()) return Fail(reports.status());
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : *reports) {
      if (!cmp_opts.quiet) r.WriteText(std::cout);
      r.WriteMetrics(std::cout, r.variant + ".");
      all.push_back(r.ToJson());
    }
    tphkv::bench::WriteComparison(std::cout, *reports);
    Emit(cmp_opts, all);
    return 0;
  }

  tphkv::bench::VerifyResult r = tphkv::bench::Verify(verify_dir, verify_seed);
  std::cout << "verify=" << (r.pass ? "PASS" : "FAIL") << "\n"
            << "keys_checked=" << r.keys_checked << "\n"
            << "scanned=" << r.scanned << "\n";
  if (!r.pass) {
    std::cout << "diagnostic=" << r.diagnostic << "\n";
    std::cerr << "verification failed: " << r.status.ToString() << "\n";
    return 2;
  }
  return 0;
}
