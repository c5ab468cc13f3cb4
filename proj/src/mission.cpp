#include <ralc/mission.hpp>

#include <ralc/checkpoint.hpp>
#include <ralc/evaluation.hpp>

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ralc {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr int kMaxRecoveries = 3;

json to_json(const MarginalizationReport& r) {
  return {{"region_id", r.region_id},
          {"removed_count", r.removed_count},
          {"recovered_factor_count", r.recovered_factor_count},
          {"kld", r.kld},
          {"dense_fallbacks", r.dense_fallbacks}};
}

json xy(const Eigen::Vector2d& p) { return json::array({p.x(), p.y()}); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

/// World-frame bounding box of the known cells of a submap placed at `at`.
std::pair<Eigen::Vector2d, Eigen::Vector2d> footprint(const Submap& s, const Pose2& at) {
  const double r = s.grid.resolution;
  const double x0 = s.min_x * r, x1 = (s.max_x + 1) * r, y0 = s.min_y * r, y1 = (s.max_y + 1) * r;
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Eigen::Vector2d& c : {Eigen::Vector2d(x0, y0), Eigen::Vector2d(x1, y0), Eigen::Vector2d(x0, y1),
                                   Eigen::Vector2d(x1, y1)}) {
    const Eigen::Vector2d w = at.transform(c);
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
  return {lo, hi};
}

bool segment_traversable(const PlanningGrid& grid, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const auto& t = grid.traversable;
  const double len = (b - a).norm();
  const int n = static_cast<int>(std::ceil(len / (0.5 * t.resolution)));
  for (int i = 1; i <= n; ++i) {
    const CellIndex c = t.cell_of(a + (b - a) * (static_cast<double>(i) / n));
    if (!grid.ok(c.x, c.y)) return false;
  }
  return true;
}

bool is_run_output(const std::string& name) {
  static const std::set<std::string> fixed = {"metrics.json", "timing.json", "decisions.jsonl", "map_final.pgm",
                                              "manifest.json"};
  if (fixed.count(name)) return true;
  auto has = [&](const char* prefix, const char* suffix) {
    const std::string p(prefix), s(suffix);
    return name.size() > p.size() + s.size() && name.compare(0, p.size(), p) == 0 &&
           name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return has("snapshot_", ".ralc") || has("snapshot_", ".ralc.tmp") || has("map_region_", ".pgm");
}

class Mission {
 public:
  Mission(const RunConfig& config, Environment env)
      : cfg_(config), env_(std::move(env)), rng_(config.seed), hash_(config_hash(config)), out_(config.out_dir) {
    params_ = cfg_.explorer;
    params_.use_regions = cfg_.algorithm != Algorithm::alc_baseline;
    robot_.radius = cfg_.robot_radius;
    robot_.noise = cfg_.odometry;
    metrics_.algorithm = to_string(cfg_.algorithm);
    metrics_.seed = cfg_.seed;
  }

  RunResult run();

 private:
  // state
  Pose2 estimate() const { return compose(graph_.keyframe(last_kf_).pose, between(odom_at_kf_, robot_.odom_pose)); }
  std::optional<RegionId> region_for(const Eigen::Vector2d& p) const;
  void cold_start();
  void reset_odometry(VertexId kf);
  void add_keyframe();
  void observe(VertexId kf);
  bool try_closure(VertexId kf);
  Pose2 placement(const Submap& s) const { return compose(graph_.keyframe(s.keyframe).pose, s.frame); }
  void refresh_map(bool force);
  void run_pgo();

  // actions
  void drive(const std::vector<Eigen::Vector2d>& path);
  void complete_region(RegionId region);
  void marginalize(RegionId region);
  bool recover(const std::string& reason);
  void finish();

  // outputs
  void log(json event);
  void note_file(const std::string& name) { files_.insert(name); }

  const RunConfig& cfg_;
  const Environment env_;
  ExplorerParams params_;
  Rng rng_;
  std::uint64_t hash_;
  fs::path out_;

  SimRobot robot_;
  PoseGraph graph_;
  std::vector<Submap> submaps_;
  std::vector<Pose2> painted_;  // world placement each submap was last painted at
  OccupancyMap map_;
  bool map_stale_{false};
  std::map<VertexId, Pose2> true_poses_;
  std::optional<Explorer> explorer_;
  std::set<VertexId> closed_;  // keyframes that already received a closure

  VertexId last_kf_{0};
  Pose2 odom_at_kf_;
  double sum_sq_trans_{0}, sum_sq_rot_{0};

  PlanningGrid grid_;
  bool grid_dirty_{true};

  int cycle_{0};
  int injection_counter_{0};
  bool injected_{false};
  int recoveries_{0};

  RunMetrics metrics_;
  std::vector<double> pgo_ms_;
  std::ofstream log_;
  std::set<std::string> files_;
};

// Keyframes belong to the region whose rectangle holds them; transit keyframes outside every
// region stay unassigned and are never marginalized.
std::optional<RegionId> Mission::region_for(const Eigen::Vector2d& p) const {
  if (!params_.use_regions || !explorer_) return std::nullopt;
  const ExplorationState& st = explorer_->state();
  if (st.active_region) {
    const Region* r = st.find_region(*st.active_region);
    if (r && r->phase != RegionPhase::completed && r->rect.contains(p)) return r->id;
  }
  for (const Region& r : st.regions)
    if (r.phase == RegionPhase::completed && r.rect.contains(p)) return r.id;
  return std::nullopt;
}

void Mission::reset_odometry(VertexId kf) {
  last_kf_ = kf;
  odom_at_kf_ = robot_.odom_pose;
  sum_sq_trans_ = sum_sq_rot_ = 0;
}

void Mission::cold_start() {
  graph_ = PoseGraph();
  submaps_.clear();
  painted_.clear();
  true_poses_.clear();
  closed_.clear();
  map_ = make_global_map(env_);
  robot_.true_pose = robot_.odom_pose = env_.dock;
  explorer_.emplace(params_, env_.dock.translation());
  const VertexId id = graph_.add_keyframe(env_.dock, std::nullopt, region_for(env_.dock.translation()),
                                          env_.feature_at(env_.dock.translation()));
  true_poses_[id] = robot_.true_pose;
  reset_odometry(id);
  observe(id);
}

void Mission::add_keyframe() {
  const Pose2 est = estimate();
  const OdometryLink link{last_kf_, between(odom_at_kf_, robot_.odom_pose),
                          odometry_information(sum_sq_trans_, sum_sq_rot_, cfg_.odometry)};
  const Eigen::Vector2d truth = robot_.true_pose.translation();
  const VertexId id = graph_.add_keyframe(est, link, region_for(est.translation()), env_.feature_at(truth));
  true_poses_[id] = robot_.true_pose;
  reset_odometry(id);
  observe(id);
}

void Mission::observe(VertexId kf) {
  const Pose2 pose = graph_.keyframe(kf).pose;
  Submap s = sense(robot_, env_, cfg_.sensor, cfg_.submap, static_cast<int>(submaps_.size()), kf);
  paint_submap(map_, s, pose);
  painted_.push_back(placement(s));
  submaps_.push_back(std::move(s));
  grid_dirty_ = true;
  try_closure(kf);
}

bool Mission::try_closure(VertexId kf) {
  if (closed_.count(kf)) return false;
  const auto lc = detect_loop_closure(graph_, kf, env_, true_poses_, cfg_.closure, rng_);
  if (!lc) return false;
  closed_.insert(kf);
  graph_.add_loop_closure(lc->target, kf, lc->measurement, lc->information);
  ++metrics_.loop_closures;
  log({{"event", "loop_closure"}, {"from", lc->target}, {"to", kf}});
  run_pgo();
  map_stale_ = true;
  return true;
}

void Mission::refresh_map(bool force) {
  // Max-precedence fusion cannot be undone per submap, so the box covering the old and new
  // footprints of every moved submap is cleared and repainted from all submaps touching it.
  constexpr double kShift = 0.02, kTurn = 0.005;  // m, rad
  map_stale_ = false;
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> boxes(submaps_.size());
  for (std::size_t i = 0; i < submaps_.size(); ++i) {
    const Pose2 now = placement(submaps_[i]);
    boxes[i] = footprint(submaps_[i], now);
    const Pose2 d = between(painted_[i], now);
    if (force || d.translation().norm() > kShift || std::abs(d.theta) > kTurn) {
      const auto old = footprint(submaps_[i], painted_[i]);
      lo = lo.cwiseMin(old.first).cwiseMin(boxes[i].first);
      hi = hi.cwiseMax(old.second).cwiseMax(boxes[i].second);
    }
  }
  if (!(lo.x() <= hi.x())) return;
  const double res = map_.resolution;
  const CellIndex a = map_.cell_of(lo), b = map_.cell_of(hi);
  const int x0 = std::max(a.x, 0), y0 = std::max(a.y, 0);
  const int x1 = std::min(b.x, map_.width - 1), y1 = std::min(b.y, map_.height - 1);
  if (x0 > x1 || y0 > y1) return;
  OccupancyMap patch(x1 - x0 + 1, y1 - y0 + 1, res, map_.origin + Eigen::Vector2d(x0 * res, y0 * res));
  for (std::size_t i = 0; i < submaps_.size(); ++i) {
    const auto& [blo, bhi] = boxes[i];
    if (bhi.x() < lo.x() || blo.x() > hi.x() || bhi.y() < lo.y() || blo.y() > hi.y()) continue;
    paint_submap(patch, submaps_[i], graph_.keyframe(submaps_[i].keyframe).pose);
    painted_[i] = placement(submaps_[i]);
  }
  for (int y = y0; y <= y1; ++y)
    std::copy_n(&patch.at(0, y - y0), patch.width, &map_.at(x0, y));
  grid_dirty_ = true;
}

void Mission::run_pgo() {
  const OptimizeReport r = optimize(graph_, cfg_.optimizer);
  ++metrics_.pgo_count;
  pgo_ms_.push_back(r.wall_time_ms);
}

void Mission::drive(const std::vector<Eigen::Vector2d>& path) {
  if (path.empty()) return;
  std::size_t nearest = 0;
  for (int step = 0; step < cfg_.steps_per_cycle; ++step) {
    const Pose2 est = estimate();
    const Eigen::Vector2d p = est.translation();

    // nearest path point, only moving forward
    for (std::size_t i = nearest + 1; i < path.size() && i < nearest + 20; ++i)
      if ((path[i] - p).norm() < (path[nearest] - p).norm()) nearest = i;
    std::size_t look = nearest;
    while (look + 1 < path.size() && (path[look] - p).norm() < cfg_.lookahead) ++look;
    // never steer across cells the planner considers blocked: that is how door jambs get clipped
    while (look > nearest && !segment_traversable(grid_, p, path[look])) --look;

    const double to_end = (path.back() - p).norm();
    // arrival is judged by the planner's tolerance; creeping closer only burns the rest of the cycle
    if (to_end < 0.8 * cfg_.explorer.goal_tolerance) break;
    const Eigen::Vector2d d = path[look] - p;
    const double alpha = normalize_angle(std::atan2(d.y(), d.x()) - est.theta);
    const double omega = std::clamp(2.5 * alpha, -cfg_.max_turn_rate, cfg_.max_turn_rate);
    double v = 0;
    constexpr double kTurnInPlace = 0.6;  // rad; larger heading errors rotate without advancing
    if (std::abs(alpha) < kTurnInPlace)
      v = std::min(cfg_.max_speed * (1.0 - std::abs(alpha) / kTurnInPlace * 0.7), std::max(0.1, to_end));

    const StepResult r = step_robot(robot_, env_, v, omega, cfg_.dt, rng_);
    sum_sq_trans_ += r.odom_increment.translation().squaredNorm();
    sum_sq_rot_ += r.odom_increment.theta * r.odom_increment.theta;
    const Pose2 since = between(odom_at_kf_, robot_.odom_pose);
    if (since.translation().norm() >= cfg_.keyframe_distance || std::abs(since.theta) >= cfg_.keyframe_angle)
      add_keyframe();
  }
}

void Mission::marginalize(RegionId region) {
  std::map<VertexId, Pose2> before;
  for (const auto& [id, kf] : graph_.keyframes()) before[id] = kf.pose;
  MarginalizationReport report;
  try {
    report = marginalize_region(graph_, region, cfg_.marginalization);
  } catch (const GraphError&) {
    return;  // every keyframe of the region is already an anchor
  }
  const std::set<VertexId> removed(report.removed.begin(), report.removed.end());
  for (Submap& s : submaps_) {
    if (!removed.count(s.keyframe)) continue;
    const Eigen::Vector2d at = before.at(s.keyframe).translation();
    VertexId best = graph_.keyframes().begin()->first;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [id, kf] : graph_.keyframes()) {
      const double d = (kf.pose.translation() - at).norm();
      if (d < best_d) best = id, best_d = d;  // strict: lowest id wins ties
    }
    reattach_submap(s, before.at(s.keyframe), best, graph_.keyframe(best).pose);
  }
  for (VertexId id : removed) true_poses_.erase(id);
  metrics_.marginalization.push_back(report);
  log({{"event", "marginalize"},
       {"region", region},
       {"removed", report.removed_count},
       {"recovered_factors", report.recovered_factor_count},
       {"kld", report.kld}});
}

void Mission::complete_region(RegionId region) {
  if (cfg_.algorithm == Algorithm::ralc) marginalize(region);
  json ev = {{"event", "region_complete"}, {"region", region}, {"keyframes", graph_.size()}};
  if (const Region* r = explorer_->state().find_region(region))
    ev["rect"] = {r->rect.x_min, r->rect.y_min, r->rect.x_max, r->rect.y_max};
  log(ev);

  MapSnapshot snap;
  snap.created_after_region = region;
  snap.config_hash = hash_;
  snap.rng_state = rng_.state();
  snap.exploration = explorer_->state();
  snap.graph = graph_;
  snap.submaps = submaps_;
  snap.map = map_;
  snap.true_poses = true_poses_;
  note_file(fs::path(save_snapshot(snap, out_.string())).filename().string());

  const std::string name = "map_region_" + std::to_string(region) + ".pgm";
  write_pgm(map_, (out_ / name).string());
  note_file(name);
}

bool Mission::recover(const std::string& reason) {
  if (metrics_.completed_before_failure.empty()) {
    const auto done = explorer_->state().completed_regions();
    metrics_.completed_before_failure.assign(done.begin(), done.end());
  }
  log({{"event", "failure"}, {"reason", reason}});
  if (!cfg_.recovery || recoveries_ >= kMaxRecoveries) return false;
  ++recoveries_;

  MapSnapshot snap;
  try {
    snap = restore_latest(out_.string(), hash_);
  } catch (const ColdStart&) {
    ++metrics_.cold_starts;
    log({{"event", "cold_start"}});
    cold_start();
    return true;
  } catch (const SnapshotError& e) {
    log({{"event", "restore_failed"}, {"reason", e.what()}});
    return false;
  }

  graph_ = std::move(snap.graph);
  submaps_ = std::move(snap.submaps);
  map_ = std::move(snap.map);
  true_poses_ = std::move(snap.true_poses);
  rng_.set_state(snap.rng_state);
  closed_.clear();
  explorer_.emplace(params_, std::move(snap.exploration));
  const auto done = explorer_->state().completed_regions();
  metrics_.completed_at_restore.assign(done.begin(), done.end());
  explorer_->restart_at(env_.dock.translation());
  ++metrics_.restores;
  log({{"event", "restore"}, {"snapshot_region", snap.created_after_region}, {"completed", metrics_.completed_at_restore}});

  // returned to the dock; relocalization is a closure against the nearest surviving keyframe
  robot_.true_pose = robot_.odom_pose = env_.dock;
  VertexId nearest = graph_.root();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [id, pose] : true_poses_) {
    const double d = (pose.translation() - env_.dock.translation()).norm();
    if (d < best) nearest = id, best = d;
  }
  Pose2 z = between(true_poses_.at(nearest), env_.dock);
  if (cfg_.closure.noisy) z = compose(z, sample_pose_noise(rng_, cfg_.closure.sigma));
  const Pose2 est = compose(graph_.keyframe(nearest).pose, z);
  const VertexId id =
      graph_.add_keyframe(est, OdometryLink{nearest, z, cfg_.closure.information}, region_for(est.translation()),
                          env_.feature_at(env_.dock.translation()), FactorKind::loop_closure);
  true_poses_[id] = env_.dock;
  reset_odometry(id);
  run_pgo();
  painted_.assign(submaps_.size(), Pose2());
  refresh_map(true);
  observe(id);
  return true;
}

void Mission::finish() {
  // keyframes added while stabilizing belong to completed regions and are thinned like the rest
  if (cfg_.algorithm == Algorithm::ralc)
    for (RegionId r : explorer_->state().completed_regions()) {
      const bool extra = std::any_of(graph_.keyframes().begin(), graph_.keyframes().end(), [&](const auto& kv) {
        return kv.second.region_id == r && !kv.second.is_anchor && kv.first != graph_.latest() &&
               kv.first != graph_.root();
      });
      if (extra) marginalize(r);
    }
  log({{"event", "finish"}});
}

void Mission::log(json event) {
  event["cycle"] = cycle_;
  log_ << event.dump() << "\n" << std::flush;
}

RunResult Mission::run() {
  const auto wall0 = std::chrono::steady_clock::now();
  fs::create_directories(out_);
  for (const auto& entry : fs::directory_iterator(out_))
    if (entry.is_regular_file() && is_run_output(entry.path().filename().string())) fs::remove(entry.path());
  log_.open(out_ / "decisions.jsonl", std::ios::binary);
  if (!log_) throw std::runtime_error("cannot write to " + out_.string());
  note_file("decisions.jsonl");

  log({{"event", "start"}, {"algorithm", metrics_.algorithm}, {"seed", cfg_.seed}, {"environment", env_.name}});
  cold_start();

  const double inflation = cfg_.robot_radius + cfg_.inflation_margin;
  std::string outcome = "cycle_limit";
  while (cycle_ < cfg_.max_cycles) {
    ++cycle_;
    try {
      if (map_stale_) refresh_map(false);
      if (grid_dirty_) {
        grid_ = make_planning_grid(map_, inflation);
        grid_dirty_ = false;
      }
      const PlanningContext ctx{graph_, map_, grid_, estimate(), last_kf_};
      Action action = explorer_->planning_cycle(ctx);
      const ExplorationState& st = explorer_->state();

      if (cfg_.inject && !injected_ && action.kind == Action::Kind::navigate &&
          (st.phase == ExplorationPhase::region_discovery || st.phase == ExplorationPhase::region_refinement) &&
          st.active_region == cfg_.inject->region &&
          ++injection_counter_ >= cfg_.inject->after_cycles) {
        injected_ = true;
        if (cfg_.inject->kind == FailureInjection::Kind::cholesky)
          throw OptimizationError("injected Cholesky failure", 0);
        action = Action{};
        action.kind = Action::Kind::fail;
        action.reason = "no path: injected failure";
      }

      switch (action.kind) {
        case Action::Kind::navigate: {
          json ev = {{"event", "navigate"},
                     {"phase", to_string(st.phase)},
                     {"planner", to_string(action.planner)},
                     {"region", action.region},
                     {"target", xy(action.target)}};
          if (action.alc_representative) ev["alc_target"] = *action.alc_representative;
          if (!action.delta_u.empty()) ev["delta_u"] = action.delta_u;
          log(ev);
          drive(action.path);
          metrics_.duration_s = metrics_.duration_s + cfg_.steps_per_cycle * cfg_.dt;
          if (action.planner == PlannerKind::alc &&
              (estimate().translation() - action.target).norm() <= params_.goal_tolerance)
            try_closure(last_kf_);
          break;
        }
        case Action::Kind::mark_region_complete:
          complete_region(action.region);
          break;
        case Action::Kind::start_global_stabilization:
          log({{"event", "global_stabilization"}, {"waypoints", st.tour.size()}});
          break;
        case Action::Kind::finish:
          finish();
          outcome = "done";
          break;
        case Action::Kind::fail:
          if (!recover(action.reason)) outcome = "failed";
          break;
      }
    } catch (const OptimizationError& e) {
      if (!recover(std::string("optimizer: ") + e.what())) outcome = "failed";
    }
    if (outcome != "cycle_limit") break;
  }

  refresh_map(true);
  metrics_.outcome = outcome;
  metrics_.cycles = cycle_;
  metrics_.keyframes = static_cast<int>(graph_.size());
  metrics_.submaps = static_cast<int>(submaps_.size());
  const auto done = explorer_->state().completed_regions();
  metrics_.completed_regions.assign(done.begin(), done.end());

  RunResult result;
  result.exit_code = outcome == "done" ? 0 : 2;
  result.metrics = metrics_;
  result.final_map = map_;
  result.timing.total_pgo_ms = std::accumulate(pgo_ms_.begin(), pgo_ms_.end(), 0.0);
  result.timing.mean_pgo_ms = pgo_ms_.empty() ? 0.0 : result.timing.total_pgo_ms / pgo_ms_.size();
  result.timing.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  log({{"event", "end"}, {"outcome", outcome}});
  log_.close();

  write_pgm(map_, (out_ / "map_final.pgm").string());
  note_file("map_final.pgm");
  write_text(out_ / "metrics.json", metrics_json(metrics_));
  note_file("metrics.json");
  const json timing = {{"mean_pgo_ms", result.timing.mean_pgo_ms},
                       {"total_pgo_ms", result.timing.total_pgo_ms},
                       {"pgo_count", metrics_.pgo_count},
                       {"wall_s", result.timing.wall_s}};
  write_text(out_ / "timing.json", timing.dump(2) + "\n");
  note_file("timing.json");
  note_file("manifest.json");
  write_text(out_ / "manifest.json", json{{"files", files_}}.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------------------------

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.filename().string() + " in " + path.parent_path().string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("unreadable " + path.string() + ": " + e.what());
  }
}

CompareRow load_row(const std::string& dir, const OccupancyMap* map_reference) {
  CompareRow row;
  row.dir = dir;
  const json m = read_json(fs::path(dir) / "metrics.json");
  row.algorithm = m.at("algorithm").get<std::string>();
  row.duration_s = m.at("duration_s").get<double>();
  row.keyframes = m.at("keyframes").get<double>();
  row.submaps = m.at("submaps").get<double>();
  const fs::path timing = fs::path(dir) / "timing.json";
  if (fs::exists(timing)) row.mean_pgo_ms = read_json(timing).at("mean_pgo_ms").get<double>();
  if (map_reference) {
    const MapQuality q = evaluate_map(read_pgm((fs::path(dir) / "map_final.pgm").string()), *map_reference);
    row.miou = q.miou;
    row.mdte = q.mdte;
  }
  return row;
}

double pct(double value, double reference) { return reference == 0 ? 0.0 : 100.0 * (value - reference) / reference; }

json row_json(const CompareRow& r, const CompareRow& ref) {
  return {{"dir", r.dir},
          {"algorithm", r.algorithm},
          {"duration_s", r.duration_s},
          {"keyframes", r.keyframes},
          {"submaps", r.submaps},
          {"mean_pgo_ms", r.mean_pgo_ms},
          {"miou", r.miou},
          {"mdte", r.mdte},
          {"delta_pct",
           {{"duration_s", pct(r.duration_s, ref.duration_s)},
            {"keyframes", pct(r.keyframes, ref.keyframes)},
            {"submaps", pct(r.submaps, ref.submaps)},
            {"mean_pgo_ms", pct(r.mean_pgo_ms, ref.mean_pgo_ms)}}}};
}

std::string row_text(const CompareRow& r, const CompareRow& ref) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-28s %-13s %9.1f %9.1f %8.1f %9.3f %6.3f %7.4f   %+7.1f%% %+7.1f%% %+7.1f%% %+7.1f%%\n",
                r.dir.c_str(), r.algorithm.c_str(), r.duration_s, r.keyframes, r.submaps, r.mean_pgo_ms, r.miou, r.mdte,
                pct(r.duration_s, ref.duration_s), pct(r.keyframes, ref.keyframes), pct(r.submaps, ref.submaps),
                pct(r.mean_pgo_ms, ref.mean_pgo_ms));
  return buf;
}

}  // namespace

RunResult run_mission(const RunConfig& config) {
  Mission mission(config, load_environment(config.env_path));
  return mission.run();
}

std::string metrics_json(const RunMetrics& m) {
  json reports = json::array();
  for (const auto& r : m.marginalization) reports.push_back(to_json(r));
  const json j = {{"algorithm", m.algorithm},
                  {"seed", m.seed},
                  {"outcome", m.outcome},
                  {"duration_s", m.duration_s},
                  {"keyframes", m.keyframes},
                  {"submaps", m.submaps},
                  {"pgo_count", m.pgo_count},
                  {"loop_closures", m.loop_closures},
                  {"cycles", m.cycles},
                  {"restores", m.restores},
                  {"cold_starts", m.cold_starts},
                  {"completed_regions", m.completed_regions},
                  {"completed_before_failure", m.completed_before_failure},
                  {"completed_at_restore", m.completed_at_restore},
                  {"marginalization", reports}};
  return j.dump(2) + "\n";
}

CompareReport compare_runs(const std::vector<std::string>& run_dirs, const std::string& reference_dir,
                           const std::string& map_reference_dir) {
  if (run_dirs.empty()) throw std::runtime_error("compare needs at least one run directory");
  const std::string map_dir = map_reference_dir.empty() ? reference_dir : map_reference_dir;
  const fs::path map_path = fs::path(map_dir) / "map_final.pgm";
  if (!fs::exists(map_path)) throw std::runtime_error("missing map_final.pgm in " + map_dir);
  const OccupancyMap map_ref = read_pgm(map_path.string());

  CompareReport report;
  report.reference = load_row(reference_dir, &map_ref);
  for (const auto& dir : run_dirs) report.runs.push_back(load_row(dir, &map_ref));

  std::map<std::string, std::vector<const CompareRow*>> groups;
  for (const auto& r : report.runs) groups[r.algorithm].push_back(&r);
  for (const auto& [algo, rows] : groups) {
    CompareRow mean;
    mean.dir = "(mean of " + std::to_string(rows.size()) + ")";
    mean.algorithm = algo;
    for (const CompareRow* r : rows) {
      mean.duration_s += r->duration_s / rows.size();
      mean.keyframes += r->keyframes / rows.size();
      mean.submaps += r->submaps / rows.size();
      mean.mean_pgo_ms += r->mean_pgo_ms / rows.size();
      mean.miou += r->miou / rows.size();
      mean.mdte += r->mdte / rows.size();
    }
    report.per_algorithm.push_back(mean);
  }

  const CompareRow& ref = report.reference;
  std::ostringstream text;
  char header[512];
  std::snprintf(header, sizeof header, "%-28s %-13s %9s %9s %8s %9s %6s %7s   %8s %8s %8s %8s\n", "run", "algorithm",
                "duration", "keyframes", "submaps", "pgo_ms", "mIoU", "mDTE", "d_dur", "d_kf", "d_sub", "d_pgo");
  text << header << row_text(ref, ref);
  for (const auto& r : report.runs) text << row_text(r, ref);
  text << "\n";
  for (const auto& r : report.per_algorithm) text << row_text(r, ref);
  report.text = text.str();

  json j;
  j["reference"] = row_json(ref, ref);
  j["runs"] = json::array();
  for (const auto& r : report.runs) j["runs"].push_back(row_json(r, ref));
  j["per_algorithm"] = json::array();
  for (const auto& r : report.per_algorithm) j["per_algorithm"].push_back(row_json(r, ref));
  report.json = j.dump(2) + "\n";
  return report;
}

}  // namespace ralc
