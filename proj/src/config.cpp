#include <ralc/config.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

namespace ralc {

namespace {

using Ref = std::variant<std::function<double&(RunConfig&)>, std::function<int&(RunConfig&)>,
                         std::function<bool&(RunConfig&)>>;

// clang-format off
const std::map<std::string, Ref>& fields() {
  static const std::map<std::string, Ref> table = {
    {"region.w_min", [](RunConfig& c) -> double& { return c.explorer.limits.w_min; }},
    {"region.h_min", [](RunConfig& c) -> double& { return c.explorer.limits.h_min; }},
    {"region.w_max", [](RunConfig& c) -> double& { return c.explorer.limits.w_max; }},
    {"region.h_max", [](RunConfig& c) -> double& { return c.explorer.limits.h_max; }},
    {"region.grow_radius", [](RunConfig& c) -> double& { return c.explorer.grow_radius; }},
    {"frontier.beta1", [](RunConfig& c) -> double& { return c.explorer.weights.heading; }},
    {"frontier.beta3", [](RunConfig& c) -> double& { return c.explorer.weights.sw; }},
    {"frontier.beta4", [](RunConfig& c) -> double& { return c.explorer.weights.size; }},
    {"frontier.min_size", [](RunConfig& c) -> int& { return c.explorer.min_frontier_size; }},
    {"frontier.segment", [](RunConfig& c) -> double& { return c.explorer.frontier_segment; }},
    {"alc.threshold", [](RunConfig& c) -> double& { return c.explorer.alc.threshold; }},
    {"alc.distance_weight", [](RunConfig& c) -> double& { return c.explorer.alc.distance_weight; }},
    {"alc.cluster_radius", [](RunConfig& c) -> double& { return c.explorer.alc.cluster_radius; }},
    {"alc.min_feature", [](RunConfig& c) -> double& { return c.explorer.alc.min_feature_score; }},
    {"planner.goal_tolerance", [](RunConfig& c) -> double& { return c.explorer.goal_tolerance; }},
    {"planner.projection_radius", [](RunConfig& c) -> double& { return c.explorer.projection_radius; }},
    {"planner.blacklist_radius", [](RunConfig& c) -> double& { return c.explorer.blacklist_radius; }},
    {"planner.stall_limit", [](RunConfig& c) -> int& { return c.explorer.stall_limit; }},
    {"planner.inflation_margin", [](RunConfig& c) -> double& { return c.inflation_margin; }},
    {"marginalization.anchors_per_region", [](RunConfig& c) -> int& { return c.marginalization.anchors_per_region; }},
    {"marginalization.anchor_distance_weight", [](RunConfig& c) -> double& { return c.marginalization.anchor_distance_weight; }},
    {"odometry.trans_sigma", [](RunConfig& c) -> double& { return c.odometry.trans_sigma; }},
    {"odometry.rot_sigma", [](RunConfig& c) -> double& { return c.odometry.rot_sigma; }},
    {"sensor.range", [](RunConfig& c) -> double& { return c.sensor.max_range; }},
    {"sensor.beams", [](RunConfig& c) -> int& { return c.sensor.beams; }},
    {"submap.extent", [](RunConfig& c) -> double& { return c.submap.extent; }},
    {"closure.max_distance", [](RunConfig& c) -> double& { return c.closure.max_distance; }},
    {"closure.min_feature", [](RunConfig& c) -> double& { return c.closure.min_feature; }},
    {"closure.min_id_gap", [](RunConfig& c) -> int& { return c.closure.min_id_gap; }},
    {"closure.sigma_x", [](RunConfig& c) -> double& { return c.closure.sigma.x(); }},
    {"closure.sigma_y", [](RunConfig& c) -> double& { return c.closure.sigma.y(); }},
    {"closure.sigma_theta", [](RunConfig& c) -> double& { return c.closure.sigma.z(); }},
    {"closure.noisy", [](RunConfig& c) -> bool& { return c.closure.noisy; }},
    {"optimizer.max_iterations", [](RunConfig& c) -> int& { return c.optimizer.max_iterations; }},
    {"optimizer.convergence_delta", [](RunConfig& c) -> double& { return c.optimizer.convergence_delta; }},
    {"robot.radius", [](RunConfig& c) -> double& { return c.robot_radius; }},
    {"robot.max_speed", [](RunConfig& c) -> double& { return c.max_speed; }},
    {"robot.max_turn_rate", [](RunConfig& c) -> double& { return c.max_turn_rate; }},
    {"robot.lookahead", [](RunConfig& c) -> double& { return c.lookahead; }},
    {"sim.dt", [](RunConfig& c) -> double& { return c.dt; }},
    {"sim.steps_per_cycle", [](RunConfig& c) -> int& { return c.steps_per_cycle; }},
    {"keyframe.distance", [](RunConfig& c) -> double& { return c.keyframe_distance; }},
    {"keyframe.angle", [](RunConfig& c) -> double& { return c.keyframe_angle; }},
    {"run.max_cycles", [](RunConfig& c) -> int& { return c.max_cycles; }},
    {"run.recovery", [](RunConfig& c) -> bool& { return c.recovery; }},
  };
  return table;
}
// clang-format on

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad number for " + key + ": '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

void sync_derived(RunConfig& c) {
  const Eigen::Vector3d s = c.closure.sigma;
  if ((s.array() <= 0).any()) throw ConfigError("closure sigmas must be positive");
  c.closure.information = s.cwiseProduct(s).cwiseInverse().asDiagonal();
  c.explorer.closure_information = c.closure.information;
  if (c.explorer.limits.w_min > c.explorer.limits.w_max || c.explorer.limits.h_min > c.explorer.limits.h_max)
    throw ConfigError("region minimum size exceeds maximum");
  if (c.marginalization.anchors_per_region < 1) throw ConfigError("anchors_per_region must be >= 1");
  if (c.steps_per_cycle < 1 || c.dt <= 0) throw ConfigError("simulation step must be positive");
  if (c.sensor.beams < 1 || c.sensor.max_range <= 0) throw ConfigError("sensor must have beams and range");
}

}  // namespace

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ralc: return "ralc";
    case Algorithm::ralc_no_marg: return "ralc_no_marg";
    case Algorithm::alc_baseline: return "alc_baseline";
  }
  return "?";
}

std::optional<Algorithm> parse_algorithm(std::string_view text) {
  std::string t(text);
  for (auto& ch : t)
    if (ch == '-') ch = '_';
  if (t == "ralc") return Algorithm::ralc;
  if (t == "ralc_no_marg") return Algorithm::ralc_no_marg;
  if (t == "alc_baseline") return Algorithm::alc_baseline;
  return std::nullopt;
}

const char* to_string(FailureInjection::Kind k) {
  return k == FailureInjection::Kind::no_path ? "no_path" : "cholesky";
}

FailureInjection parse_injection(const std::string& text) {
  FailureInjection inj;
  bool have_region = false, have_kind = false;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("bad failure injection item '" + item + "'");
    const std::string key = trim(item.substr(0, eq)), value = trim(item.substr(eq + 1));
    if (key == "region") {
      inj.region = parse_int(key, value);
      have_region = true;
    } else if (key == "kind") {
      if (value == "no_path") inj.kind = FailureInjection::Kind::no_path;
      else if (value == "cholesky") inj.kind = FailureInjection::Kind::cholesky;
      else throw ConfigError("unknown failure kind '" + value + "'");
      have_kind = true;
    } else if (key == "after") {
      inj.after_cycles = parse_int(key, value);
    } else {
      throw ConfigError("unknown failure injection key '" + key + "'");
    }
  }
  if (!have_region || !have_kind) throw ConfigError("failure injection needs region=<id>,kind=<no_path|cholesky>");
  return inj;
}

void RunConfig::make_noiseless() {
  odometry = {0.0, 0.0};
  closure.noisy = false;
}

void apply_config(RunConfig& config, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "marginalization.topology") {
      if (value == "chow_liu") config.marginalization.topology = TopologyKind::chow_liu_tree;
      else if (value == "complete") config.marginalization.topology = TopologyKind::complete;
      else throw ConfigError("unknown topology '" + value + "'");
      continue;
    }
    const auto it = fields().find(key);
    if (it == fields().end())
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    std::visit(
        [&](auto& ref) {
          using T = std::remove_reference_t<decltype(ref(config))>;
          if constexpr (std::is_same_v<T, double>) ref(config) = parse_double(key, value);
          else if constexpr (std::is_same_v<T, int>) ref(config) = parse_int(key, value);
          else ref(config) = parse_bool(key, value);
        },
        it->second);
  }
  sync_derived(config);
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  apply_config(config, in);
}

std::string canonical_config(const RunConfig& config) {
  RunConfig copy = config;  // accessors take mutable references
  std::ostringstream out;
  for (const auto& [key, ref] : fields()) {
    out << key << " = ";
    std::visit(
        [&](auto& r) {
          using T = std::remove_reference_t<decltype(r(copy))>;
          if constexpr (std::is_same_v<T, double>) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", r(copy));
            out << buf;
          } else if constexpr (std::is_same_v<T, int>) {
            out << r(copy);
          } else {
            out << (r(copy) ? "true" : "false");
          }
        },
        ref);
    out << "\n";
  }
  out << "marginalization.topology = "
      << (config.marginalization.topology == TopologyKind::complete ? "complete" : "chow_liu") << "\n";
  return out.str();
}

std::uint64_t config_hash(const RunConfig& config) {
  const std::string text = canonical_config(config) + "algorithm = " + to_string(config.algorithm) +
                           "\nseed = " + std::to_string(config.seed) + "\n";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ralc
