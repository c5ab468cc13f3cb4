#include <ralc/world.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ralc {

namespace {

// Amanatides-Woo traversal of the cells a ray enters before `max_t`. `visit(cell)` returns false to stop.
template <typename T, typename Visit>
void traverse(const Grid<T>& grid, const Eigen::Vector2d& p0, const Eigen::Vector2d& dir, double max_t, Visit&& visit) {
  CellIndex c = grid.cell_of(p0);
  const double res = grid.resolution;
  const int sx = dir.x() > 0 ? 1 : -1, sy = dir.y() > 0 ? 1 : -1;
  constexpr double inf = std::numeric_limits<double>::infinity();
  double tx = inf, ty = inf, dx = inf, dy = inf;
  if (dir.x() != 0) {
    const double edge = grid.origin.x() + (c.x + (sx > 0 ? 1 : 0)) * res;
    tx = (edge - p0.x()) / dir.x();
    dx = res / std::abs(dir.x());
  }
  if (dir.y() != 0) {
    const double edge = grid.origin.y() + (c.y + (sy > 0 ? 1 : 0)) * res;
    ty = (edge - p0.y()) / dir.y();
    dy = res / std::abs(dir.y());
  }
  while (true) {
    if (!visit(c)) return;
    if (tx < ty) {
      if (tx > max_t) return;
      c.x += sx;
      tx += dx;
    } else {
      if (ty > max_t) return;
      c.y += sy;
      ty += dy;
    }
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

double Environment::feature_at(const Eigen::Vector2d& p) const {
  const CellIndex c = features.cell_of(p);
  return features.in_bounds(c) ? features.at(c) : 0.0;
}

double Environment::clearance(const Eigen::Vector2d& p, double limit) const {
  const double res = resolution();
  const CellIndex lo = walls.cell_of(p - Eigen::Vector2d::Constant(limit));
  const CellIndex hi = walls.cell_of(p + Eigen::Vector2d::Constant(limit));
  double best = limit;
  for (int y = lo.y; y <= hi.y; ++y)
    for (int x = lo.x; x <= hi.x; ++x) {
      if (!is_wall(x, y)) continue;
      const Eigen::Vector2d d = ((p - walls.center(x, y)).cwiseAbs().array() - 0.5 * res).cwiseMax(0.0);
      best = std::min(best, d.norm());
    }
  return best;
}

bool Environment::line_of_sight(const Eigen::Vector2d& a, const Eigen::Vector2d& b) const {
  const Eigen::Vector2d d = b - a;
  const double len = d.norm();
  const CellIndex ca = walls.cell_of(a), cb = walls.cell_of(b);
  if (ca == cb) return true;
  bool clear = true;
  traverse(walls, a, d / len, len, [&](const CellIndex& c) {
    if (c == cb) return false;
    if (!(c == ca) && is_wall(c)) {
      clear = false;
      return false;
    }
    return true;
  });
  return clear;
}

double Environment::free_area() const {
  const auto n = std::count(walls.cells.begin(), walls.cells.end(), std::uint8_t{0});
  return static_cast<double>(n) * resolution() * resolution();
}

Environment parse_environment(std::istream& in) {
  Environment env;
  double resolution = 0.05;
  bool have_dock = false, in_grid = false;
  std::vector<std::string> rows;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) { throw EnvironmentError("line " + std::to_string(line_no) + ": " + msg); };

  while (std::getline(in, line)) {
    ++line_no;
    if (in_grid) {
      const std::string row = trim(line);
      if (row.empty()) continue;
      if (row.find_first_not_of("#.") != std::string::npos) fail("grid rows may only contain '#' and '.'");
      if (!rows.empty() && row.size() != rows.front().size()) fail("ragged grid row");
      rows.push_back(row);
      continue;
    }
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';') continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos) fail("expected 'key: value'");
    const std::string key = trim(t.substr(0, colon));
    std::istringstream value(t.substr(colon + 1));
    if (key == "name") {
      env.name = trim(t.substr(colon + 1));
    } else if (key == "resolution") {
      if (!(value >> resolution) || resolution <= 0) fail("bad resolution");
    } else if (key == "dock") {
      double x, y, th;
      if (!(value >> x >> y >> th)) fail("dock needs x y theta");
      env.dock = Pose2(x, y, th);
      have_dock = true;
    } else if (key == "feature_zone") {
      FeatureZone z;
      if (!(value >> z.x_min >> z.y_min >> z.x_max >> z.y_max >> z.score)) fail("feature_zone needs x0 y0 x1 y1 score");
      if (z.score < 0 || z.score > 1) fail("feature score outside [0, 1]");
      env.zones.push_back(z);
    } else if (key == "grid") {
      in_grid = true;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!in_grid || rows.empty()) throw EnvironmentError("missing grid");
  if (!have_dock) throw EnvironmentError("missing dock");

  const int w = static_cast<int>(rows.front().size()), h = static_cast<int>(rows.size());
  env.walls = Grid<std::uint8_t>(w, h, resolution, Eigen::Vector2d::Zero());
  env.features = Grid<float>(w, h, resolution, Eigen::Vector2d::Zero(), 1.0f);
  for (int r = 0; r < h; ++r)
    for (int x = 0; x < w; ++x) env.walls.at(x, h - 1 - r) = rows[r][x] == '#' ? 1 : 0;
  for (int x = 0; x < w; ++x)
    if (!env.walls.at(x, 0) || !env.walls.at(x, h - 1)) throw EnvironmentError("grid boundary must be wall");
  for (int y = 0; y < h; ++y)
    if (!env.walls.at(0, y) || !env.walls.at(w - 1, y)) throw EnvironmentError("grid boundary must be wall");
  for (const auto& z : env.zones)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector2d c = env.features.center(x, y);
        if (c.x() >= z.x_min && c.x() <= z.x_max && c.y() >= z.y_min && c.y() <= z.y_max)
          env.features.at(x, y) = static_cast<float>(z.score);
      }
  if (env.is_wall(env.walls.cell_of(env.dock.translation()))) throw EnvironmentError("dock is inside a wall");
  return env;
}

Environment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EnvironmentError("cannot open " + path);
  return parse_environment(in);
}

// ---------------------------------------------------------------------------------------------

StepResult step_robot(SimRobot& robot, const Environment& env, double v, double omega, double dt, Rng& rng) {
  const Pose2 start = robot.true_pose;
  const double mid = start.theta + 0.5 * omega * dt;
  const Eigen::Vector2d p0 = start.translation();
  const Eigen::Vector2d full = p0 + v * dt * Eigen::Vector2d(std::cos(mid), std::sin(mid));
  const double limit = robot.radius + env.resolution();
  // A pose grazing a wall may always move in a direction that does not bring it closer.
  const double here = env.clearance(p0, limit);
  auto clear = [&](const Eigen::Vector2d& p) {
    const double c = env.clearance(p, limit);
    return c >= robot.radius || (c >= here && c > 0);
  };

  Eigen::Vector2d next = p0;
  bool blocked = false;
  if (full != p0) {
    if (clear(full)) {
      next = full;
    } else {
      blocked = true;
      const Eigen::Vector2d x_only(full.x(), p0.y()), y_only(p0.x(), full.y());
      if (clear(x_only)) next = x_only;
      else if (clear(y_only)) next = y_only;
    }
  }
  robot.true_pose = Pose2(next.x(), next.y(), start.theta + omega * dt);

  const Pose2 inc = between(start, robot.true_pose);
  const double d = inc.translation().norm(), a = std::abs(inc.theta);
  const Pose2 noise =
      sample_pose_noise(rng, Eigen::Vector3d(robot.noise.trans_sigma * d, robot.noise.trans_sigma * d, robot.noise.rot_sigma * a));
  const Pose2 measured(inc.x + noise.x, inc.y + noise.y, inc.theta + noise.theta);
  robot.odom_pose = compose(robot.odom_pose, measured);
  return {robot.true_pose, measured, blocked};
}

InfoMatrix3 odometry_information(double sum_sq_trans, double sum_sq_rot, const OdometryNoise& noise) {
  constexpr double floor = 1e-6;
  const double vt = std::max(noise.trans_sigma * noise.trans_sigma * sum_sq_trans, floor);
  const double vr = std::max(noise.rot_sigma * noise.rot_sigma * sum_sq_rot, floor);
  return Eigen::Vector3d(1 / vt, 1 / vt, 1 / vr).asDiagonal();
}

// ---------------------------------------------------------------------------------------------

OccupancyMap raycast(const Environment& env, const Eigen::Vector2d& origin, const SensorModel& sensor) {
  OccupancyMap obs(env.walls.width, env.walls.height, env.resolution(), env.walls.origin);
  for (int k = 0; k < sensor.beams; ++k) {
    const double angle = 2.0 * M_PI * k / sensor.beams;
    traverse(obs, origin, Eigen::Vector2d(std::cos(angle), std::sin(angle)), sensor.max_range, [&](const CellIndex& c) {
      if (!obs.in_bounds(c)) return false;
      if (env.is_wall(c)) {
        obs.at(c) = CellState::occupied;
        return false;
      }
      if (obs.at(c) == CellState::unknown) obs.at(c) = CellState::free;
      return true;
    });
  }
  return obs;
}

Submap sense(const SimRobot& robot, const Environment& env, const SensorModel& sensor, const SubmapParams& params,
             int id, VertexId keyframe) {
  const double res = env.resolution();
  const int n = static_cast<int>(std::lround(params.extent / res));
  Submap s;
  s.id = id;
  s.keyframe = keyframe;
  s.created_by = keyframe;
  s.grid = OccupancyMap(n, n, res, Eigen::Vector2d::Zero());
  const OccupancyMap obs = raycast(env, robot.true_pose.translation(), sensor);
  // The grid coincides with the scan raster, so the capture is lossless; the only rounding
  // happens when the submap is painted at its estimated placement.
  const CellIndex c0 = obs.cell_of(robot.true_pose.translation() - Eigen::Vector2d::Constant(0.5 * params.extent));
  s.frame = between(robot.true_pose, Pose2(obs.origin.x() + c0.x * res, obs.origin.y() + c0.y * res, 0.0));
  s.min_x = n;
  s.min_y = n;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!obs.in_bounds(c0.x + x, c0.y + y)) continue;
      const CellState st = obs.at(c0.x + x, c0.y + y);
      if (st == CellState::unknown) continue;
      s.grid.at(x, y) = st;
      s.min_x = std::min(s.min_x, x);
      s.min_y = std::min(s.min_y, y);
      s.max_x = std::max(s.max_x, x);
      s.max_y = std::max(s.max_y, y);
    }
  if (s.max_x < 0) s.min_x = s.min_y = 0;
  return s;
}

void reattach_submap(Submap& submap, const Pose2& keyframe_pose, VertexId target, const Pose2& target_pose) {
  submap.frame = compose(between(target_pose, keyframe_pose), submap.frame);
  submap.keyframe = target;
}

OccupancyMap make_global_map(const Environment& env, double margin) {
  const double res = env.resolution();
  const int pad = static_cast<int>(std::lround(margin / res));
  return OccupancyMap(env.walls.width + 2 * pad, env.walls.height + 2 * pad, res,
                      env.walls.origin - Eigen::Vector2d::Constant(pad * res));
}

void paint_submap(OccupancyMap& map, const Submap& submap, const Pose2& keyframe_pose) {
  if (submap.max_x < submap.min_x) return;
  const Pose2 t = compose(keyframe_pose, submap.frame);
  const double res = map.resolution;
  const OccupancyMap& g = submap.grid;

  const double ox = (t.x - map.origin.x()) / res, oy = (t.y - map.origin.y()) / res;
  const bool aligned = std::abs(t.theta) < 1e-9 && std::abs(ox - std::round(ox)) < 1e-6 &&
                       std::abs(oy - std::round(oy)) < 1e-6 && std::abs(g.resolution - res) < 1e-12;
  if (aligned) {
    const int ix = static_cast<int>(std::lround(ox)), iy = static_cast<int>(std::lround(oy));
    for (int y = submap.min_y; y <= submap.max_y; ++y)
      for (int x = submap.min_x; x <= submap.max_x; ++x) {
        const CellState s = g.at(x, y);
        if (s == CellState::unknown || !map.in_bounds(x + ix, y + iy)) continue;
        CellState& dst = map.at(x + ix, y + iy);
        dst = std::max(dst, s);
      }
    return;
  }

  // Inverse sampling over the world box covering the known part of the submap.
  const double x0 = submap.min_x * g.resolution, x1 = (submap.max_x + 1) * g.resolution;
  const double y0 = submap.min_y * g.resolution, y1 = (submap.max_y + 1) * g.resolution;
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Eigen::Vector2d& corner : {Eigen::Vector2d(x0, y0), Eigen::Vector2d(x1, y0), Eigen::Vector2d(x0, y1),
                                       Eigen::Vector2d(x1, y1)}) {
    const Eigen::Vector2d w = t.transform(corner);
    lo = lo.cwiseMin(w);
    hi = hi.cwiseMax(w);
  }
  const CellIndex a = map.cell_of(lo), b = map.cell_of(hi);
  const Eigen::Matrix2d rt = t.rotation().transpose();
  const Eigen::Vector2d tt = t.translation();
  for (int y = std::max(a.y, 0); y <= std::min(b.y, map.height - 1); ++y)
    for (int x = std::max(a.x, 0); x <= std::min(b.x, map.width - 1); ++x) {
      const Eigen::Vector2d local = rt * (map.center(x, y) - tt);
      const int gx = static_cast<int>(std::floor(local.x() / g.resolution));
      const int gy = static_cast<int>(std::floor(local.y() / g.resolution));
      if (gx < submap.min_x || gy < submap.min_y || gx > submap.max_x || gy > submap.max_y) continue;
      const CellState s = g.at(gx, gy);
      if (s == CellState::unknown) continue;
      CellState& dst = map.at(x, y);
      dst = std::max(dst, s);
    }
}

void rebuild_global_map(OccupancyMap& map, const std::vector<Submap>& submaps, const PoseGraph& graph) {
  std::fill(map.cells.begin(), map.cells.end(), CellState::unknown);
  for (const auto& s : submaps) paint_submap(map, s, graph.keyframe(s.keyframe).pose);
}

// ---------------------------------------------------------------------------------------------

std::optional<LoopClosure> detect_loop_closure(const PoseGraph& graph, VertexId robot_kf, const Environment& env,
                                               const std::map<VertexId, Pose2>& true_poses,
                                               const LoopClosureModel& model, Rng& rng) {
  const auto robot_it = true_poses.find(robot_kf);
  if (robot_it == true_poses.end()) return std::nullopt;
  const Pose2& robot = robot_it->second;
  const std::set<VertexId> adjacent = graph.neighbors(robot_kf);

  std::optional<VertexId> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [id, kf] : graph.keyframes()) {
    if (id == robot_kf || std::abs(id - robot_kf) < model.min_id_gap || adjacent.count(id)) continue;
    const auto it = true_poses.find(id);
    if (it == true_poses.end()) continue;
    const double d = (it->second.translation() - robot.translation()).norm();
    if (d > model.max_distance || d >= best_d) continue;
    if (env.feature_at(it->second.translation()) < model.min_feature) continue;
    if (!env.line_of_sight(robot.translation(), it->second.translation())) continue;
    best = id;
    best_d = d;
  }
  if (!best) return std::nullopt;
  const Pose2 truth = between(true_poses.at(*best), robot);
  const Pose2 noise = sample_pose_noise(rng, model.noisy ? model.sigma : Eigen::Vector3d::Zero());
  return LoopClosure{*best, compose(truth, noise), model.information};
}

}  // namespace ralc
