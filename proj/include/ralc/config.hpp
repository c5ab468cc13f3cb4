#pragma once

#include <ralc/exploration.hpp>
#include <ralc/marginalization.hpp>
#include <ralc/world.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ralc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algorithm : std::uint8_t {
  ralc = 0,          // regions, stabilization, marginalization
  ralc_no_marg = 1,  // regions and stabilization only
  alc_baseline = 2,  // frontier and ALC over the whole map
};

const char* to_string(Algorithm a);
/// Accepts both "ralc-no-marg" and "ralc_no_marg" spellings.
std::optional<Algorithm> parse_algorithm(std::string_view text);

struct FailureInjection {
  enum class Kind : std::uint8_t { no_path, cholesky };
  RegionId region{2};
  Kind kind{Kind::no_path};
  int after_cycles{5};  // navigate cycles spent in the region before the failure fires
};

const char* to_string(FailureInjection::Kind k);
/// "region=<id>,kind=<no_path|cholesky>[,after=<cycles>]"
FailureInjection parse_injection(const std::string& text);

struct RunConfig {
  std::string env_path;
  std::string out_dir;
  Algorithm algorithm{Algorithm::ralc};
  std::uint64_t seed{0};
  std::optional<FailureInjection> inject;

  ExplorerParams explorer;
  MarginalizationOptions marginalization;
  OdometryNoise odometry;
  SensorModel sensor;
  SubmapParams submap;
  LoopClosureModel closure;
  OptimizeOptions optimizer;

  double robot_radius{0.17};
  double inflation_margin{0.10};
  double max_speed{0.5};      // m/s
  double max_turn_rate{1.5};  // rad/s
  double lookahead{0.35};     // m
  double dt{0.1};             // s
  int steps_per_cycle{10};    // 1 Hz planning at dt = 0.1 s
  double keyframe_distance{0.5};
  double keyframe_angle{0.5};
  int max_cycles{50000};
  bool recovery{true};

  /// Zero odometry and closure noise: the ground-truth reference run.
  void make_noiseless();
};

/// Applies "key = value" lines ('#' starts a comment). Unknown keys and malformed values throw ConfigError.
void apply_config(RunConfig& config, std::istream& in);
void apply_config_file(RunConfig& config, const std::string& path);

/// Every tunable as sorted "key = value" lines with round-trippable numbers.
std::string canonical_config(const RunConfig& config);

/// FNV-1a over the canonical parameters, algorithm and seed. Paths and failure injection are excluded.
std::uint64_t config_hash(const RunConfig& config);

}  // namespace ralc
