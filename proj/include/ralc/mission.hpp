#pragma once

#include <ralc/config.hpp>
#include <ralc/marginalization.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace ralc {

/// Deterministic run summary; everything here is a function of config and seed.
struct RunMetrics {
  std::string algorithm;
  std::uint64_t seed{0};
  std::string outcome;  // "done", "failed" or "cycle_limit"
  double duration_s{0};  // simulated seconds
  int keyframes{0};
  int submaps{0};
  int pgo_count{0};
  int loop_closures{0};
  int cycles{0};
  int restores{0};
  int cold_starts{0};
  std::vector<RegionId> completed_regions;
  std::vector<RegionId> completed_before_failure;  // empty unless a failure occurred
  std::vector<RegionId> completed_at_restore;      // empty unless a snapshot was restored
  std::vector<MarginalizationReport> marginalization;
};

/// Wall-clock measurements, kept apart from RunMetrics because they vary between invocations.
struct RunTiming {
  double mean_pgo_ms{0};
  double total_pgo_ms{0};
  double wall_s{0};
};

struct RunResult {
  int exit_code{0};
  RunMetrics metrics;
  RunTiming timing;
  OccupancyMap final_map;
};

/// Runs one exploration mission and writes its outputs to config.out_dir:
/// metrics.json, timing.json, decisions.jsonl, map_final.pgm, map_region_<id>.pgm, snapshot_<id>.ralc
/// and manifest.json. Exit code 0 on done, 2 on an unrecovered failure or the cycle limit.
/// Throws EnvironmentError or ConfigError for bad inputs.
RunResult run_mission(const RunConfig& config);

std::string metrics_json(const RunMetrics& metrics);

struct CompareRow {
  std::string dir;
  std::string algorithm;
  double duration_s{0};
  double keyframes{0};
  double submaps{0};
  double mean_pgo_ms{0};
  double miou{0};
  double mdte{0};
};

struct CompareReport {
  CompareRow reference;
  std::vector<CompareRow> runs;
  std::vector<CompareRow> per_algorithm;  // means over runs of the same algorithm
  std::string text;
  std::string json;
};

/// Tabulates run directories against a reference directory. Map quality is measured against
/// `map_reference_dir` when given, else against the reference run's final map.
/// Throws std::runtime_error naming the directory when its metrics are missing, and on an empty list.
CompareReport compare_runs(const std::vector<std::string>& run_dirs, const std::string& reference_dir,
                           const std::string& map_reference_dir = "");

}  // namespace ralc
