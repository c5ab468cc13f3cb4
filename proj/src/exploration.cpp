#include <ralc/exploration.hpp>

#include <ralc/evaluation.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>

namespace ralc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSqrt2 = 1.41421356237309504880;

constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

// Expands [lo, hi] toward [c - r, c + r] while the extent stays within max_extent.
void grow_axis(double& lo, double& hi, double c, double r, double max_extent) {
  const double need_hi = std::max(0.0, c + r - hi);
  const double need_lo = std::max(0.0, lo - (c - r));
  double room = std::max(0.0, max_extent - (hi - lo));
  const double up = std::min(need_hi, room);
  room -= up;
  const double down = std::min(need_lo, room);
  hi += up;
  lo -= down;
}

bool is_frontier_cell(const OccupancyMap& map, int x, int y) {
  if (map.at(x, y) != CellState::unknown) return false;
  for (int k = 0; k < 4; ++k) {
    const int nx = x + kDx[k], ny = y + kDy[k];
    if (map.in_bounds(nx, ny) && map.at(nx, ny) == CellState::free) return true;
  }
  return false;
}

// Diagonal moves may not cut a blocked corner.
bool step_allowed(const PlanningGrid& g, int x, int y, int k) {
  const int nx = x + kDx[k], ny = y + kDy[k];
  if (!g.ok(nx, ny)) return false;
  if (k >= 4 && (!g.ok(nx, y) || !g.ok(x, ny))) return false;
  return true;
}

double step_cost(const PlanningGrid& g, int k) { return k >= 4 ? kSqrt2 * g.traversable.resolution : g.traversable.resolution; }

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool lex_less(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
}

// Hull chain strictly right of p -> q, in order from p to q.
void quickhull(const Eigen::Vector2d& p, const Eigen::Vector2d& q, const std::vector<Eigen::Vector2d>& set,
               std::vector<Eigen::Vector2d>& out) {
  if (set.empty()) return;
  std::size_t best = 0;
  double best_d = -1;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = -cross(p, q, set[i]);
    if (d > best_d || (d == best_d && lex_less(set[i], set[best]))) {
      best_d = d;
      best = i;
    }
  }
  const Eigen::Vector2d c = set[best];
  std::vector<Eigen::Vector2d> left, right;
  for (const auto& s : set) {
    if (cross(p, c, s) < 0) left.push_back(s);
    else if (cross(c, q, s) < 0) right.push_back(s);
  }
  quickhull(p, c, left, out);
  out.push_back(c);
  quickhull(c, q, right, out);
}

double wrap(double a) { return std::atan2(std::sin(a), std::cos(a)); }

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(RegionPhase phase) {
  switch (phase) {
    case RegionPhase::discovering: return "discovering";
    case RegionPhase::refining: return "refining";
    case RegionPhase::completed: return "completed";
  }
  return "?";
}

const char* to_string(ExplorationPhase phase) {
  switch (phase) {
    case ExplorationPhase::region_discovery: return "region_discovery";
    case ExplorationPhase::region_refinement: return "region_refinement";
    case ExplorationPhase::global_stabilization: return "global_stabilization";
    case ExplorationPhase::done: return "done";
    case ExplorationPhase::failed: return "failed";
  }
  return "?";
}

const char* to_string(PlannerKind kind) {
  switch (kind) {
    case PlannerKind::none: return "none";
    case PlannerKind::frontier: return "frontier";
    case PlannerKind::alc: return "alc";
    case PlannerKind::pgs: return "pgs";
    case PlannerKind::global: return "global";
  }
  return "?";
}

const char* to_string(Action::Kind kind) {
  switch (kind) {
    case Action::Kind::navigate: return "navigate";
    case Action::Kind::mark_region_complete: return "mark_region_complete";
    case Action::Kind::start_global_stabilization: return "start_global_stabilization";
    case Action::Kind::finish: return "finish";
    case Action::Kind::fail: return "fail";
  }
  return "?";
}

Region make_region(RegionId id, const Eigen::Vector2d& center, const RegionLimits& limits) {
  Region r;
  r.id = id;
  r.rect = {center.x() - 0.5 * limits.w_min, center.y() - 0.5 * limits.h_min, center.x() + 0.5 * limits.w_min,
            center.y() + 0.5 * limits.h_min};
  return r;
}

Region grow_region(const Region& region, const Eigen::Vector2d& robot_xy, double r, const RegionLimits& limits) {
  if (region.phase != RegionPhase::discovering) throw PlanningError("only a discovering region can grow");
  Region out = region;
  grow_axis(out.rect.x_min, out.rect.x_max, robot_xy.x(), r, limits.w_max);
  grow_axis(out.rect.y_min, out.rect.y_max, robot_xy.y(), r, limits.h_max);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Frontier> detect_frontiers(const OccupancyMap& map, const std::optional<Rect>& region) {
  std::vector<Frontier> out;
  std::vector<std::uint8_t> seen(map.cells.size(), 0);
  std::vector<CellIndex> stack;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      if (seen[map.index(x, y)] || !is_frontier_cell(map, x, y)) continue;
      Frontier f;
      seen[map.index(x, y)] = 1;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const CellIndex c = stack.back();
        stack.pop_back();
        f.cells.push_back(c);
        for (int k = 0; k < 8; ++k) {
          const int nx = c.x + kDx[k], ny = c.y + kDy[k];
          if (!map.in_bounds(nx, ny) || seen[map.index(nx, ny)] || !is_frontier_cell(map, nx, ny)) continue;
          seen[map.index(nx, ny)] = 1;
          stack.push_back({nx, ny});
        }
      }
      std::sort(f.cells.begin(), f.cells.end());
      Eigen::Vector2d sum = Eigen::Vector2d::Zero();
      for (const auto& c : f.cells) sum += map.center(c);
      f.centroid = sum / static_cast<double>(f.cells.size());
      if (!region || region->contains(f.centroid)) out.push_back(std::move(f));
    }
  return out;
}

std::vector<Frontier> split_frontier(const Frontier& frontier, const OccupancyMap& map, double tile) {
  std::map<std::pair<long, long>, Frontier> pieces;  // keyed (row, column) for scan order
  for (const auto& c : frontier.cells) {
    const Eigen::Vector2d p = map.center(c);
    const auto key = std::make_pair(static_cast<long>(std::floor(p.y() / tile)), static_cast<long>(std::floor(p.x() / tile)));
    pieces[key].cells.push_back(c);
  }
  std::vector<Frontier> out;
  for (auto& [key, f] : pieces) {
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    for (const auto& c : f.cells) sum += map.center(c);
    f.centroid = sum / static_cast<double>(f.cells.size());
    out.push_back(std::move(f));
  }
  return out;
}

bool same_frontier(const Frontier& a, const Frontier& b, double tolerance) {
  if ((a.centroid - b.centroid).norm() <= tolerance) return true;
  auto i = a.cells.begin(), j = b.cells.begin();
  while (i != a.cells.end() && j != b.cells.end()) {
    if (*i == *j) return true;
    if (*i < *j) ++i;
    else ++j;
  }
  return false;
}

double frontier_cost(const Frontier& frontier, const Pose2& robot, double path_length,
                     const std::optional<Frontier>& previous, const FrontierWeights& weights) {
  const Eigen::Vector2d d = frontier.centroid - robot.translation();
  const double heading = d.norm() > 1e-9 ? std::abs(wrap(std::atan2(d.y(), d.x()) - robot.theta)) : 0.0;
  const double switching = previous && !same_frontier(frontier, *previous) ? 1.0 : 0.0;
  return path_length + weights.heading * heading + weights.sw * switching - weights.size * frontier.size();
}

// ---------------------------------------------------------------------------

PlanningGrid make_planning_grid(const OccupancyMap& map, double inflation) {
  PlanningGrid g;
  g.inflation = inflation;
  g.traversable = Grid<std::uint8_t>(map.width, map.height, map.resolution, map.origin, 0);

  int x0 = map.width, y0 = map.height, x1 = -1, y1 = -1;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      if (map.at(x, y) != CellState::unknown) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return g;

  // Distances only matter near known cells; crop so the transform stays proportional to the explored area.
  OccupancyMap crop(x1 - x0 + 1, y1 - y0 + 1, map.resolution, map.origin + map.resolution * Eigen::Vector2d(x0, y0));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) crop.at(x - x0, y - y0) = map.at(x, y);
  const Grid<double> dist = distance_transform(crop, MapClass::occupied);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      g.traversable.at(x, y) = map.at(x, y) == CellState::free && dist.at(x - x0, y - y0) >= inflation;
  return g;
}

Grid<double> dijkstra(const PlanningGrid& grid, CellIndex start) {
  const auto& t = grid.traversable;
  Grid<double> cost(t.width, t.height, t.resolution, t.origin, kInf);
  if (!grid.ok(start.x, start.y)) return cost;
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  cost.at(start) = 0;
  open.push({0.0, t.index(start.x, start.y)});
  while (!open.empty()) {
    const auto [c, i] = open.top();
    open.pop();
    if (c > cost.cells[i]) continue;
    const int x = static_cast<int>(i % t.width), y = static_cast<int>(i / t.width);
    for (int k = 0; k < 8; ++k) {
      if (!step_allowed(grid, x, y, k)) continue;
      const std::size_t j = t.index(x + kDx[k], y + kDy[k]);
      const double nc = c + step_cost(grid, k);
      if (nc < cost.cells[j]) {
        cost.cells[j] = nc;
        open.push({nc, j});
      }
    }
  }
  return cost;
}

std::vector<Eigen::Vector2d> plan_path(const PlanningGrid& grid, const Eigen::Vector2d& from, const Eigen::Vector2d& to) {
  const auto& t = grid.traversable;
  const CellIndex s = t.cell_of(from), goal = t.cell_of(to);
  if (!grid.ok(s.x, s.y) || !grid.ok(goal.x, goal.y)) throw PlanningError("no path: endpoint not traversable");
  if (s == goal) return {t.center(s)};

  const double res = t.resolution;
  auto h = [&](int x, int y) {
    const int dx = std::abs(x - goal.x), dy = std::abs(y - goal.y);
    return res * ((std::max(dx, dy) - std::min(dx, dy)) + kSqrt2 * std::min(dx, dy));
  };
  std::vector<double> g(t.cells.size(), kInf);
  std::vector<std::int64_t> parent(t.cells.size(), -1);
  std::vector<std::uint8_t> closed(t.cells.size(), 0);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const std::size_t si = t.index(s.x, s.y), gi = t.index(goal.x, goal.y);
  g[si] = 0;
  open.push({h(s.x, s.y), si});
  while (!open.empty()) {
    const std::size_t i = open.top().second;
    open.pop();
    if (closed[i]) continue;
    closed[i] = 1;
    if (i == gi) break;
    const int x = static_cast<int>(i % t.width), y = static_cast<int>(i / t.width);
    for (int k = 0; k < 8; ++k) {
      if (!step_allowed(grid, x, y, k)) continue;
      const int nx = x + kDx[k], ny = y + kDy[k];
      const std::size_t j = t.index(nx, ny);
      const double ng = g[i] + step_cost(grid, k);
      if (ng < g[j]) {
        g[j] = ng;
        parent[j] = static_cast<std::int64_t>(i);
        open.push({ng + h(nx, ny), j});
      }
    }
  }
  if (!closed[gi]) throw PlanningError("no path");
  std::vector<Eigen::Vector2d> path;
  for (std::int64_t i = static_cast<std::int64_t>(gi); i >= 0; i = parent[static_cast<std::size_t>(i)])
    path.push_back(t.center(static_cast<int>(i % t.width), static_cast<int>(i / t.width)));
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<Eigen::Vector2d> plan_path(const OccupancyMap& map, const Eigen::Vector2d& from, const Eigen::Vector2d& to,
                                       double robot_radius) {
  return plan_path(make_planning_grid(map, robot_radius), from, to);
}

double path_length(const std::vector<Eigen::Vector2d>& path) {
  double len = 0;
  for (std::size_t i = 1; i < path.size(); ++i) len += (path[i] - path[i - 1]).norm();
  return len;
}

std::optional<CellIndex> nearest_reachable_cell(const PlanningGrid& grid, const Grid<double>* field,
                                                const Eigen::Vector2d& p, double radius) {
  const auto& t = grid.traversable;
  const CellIndex c = t.cell_of(p);
  const int span = static_cast<int>(std::ceil(radius / t.resolution)) + 1;
  std::optional<CellIndex> best;
  double best_d = kInf, best_cost = kInf;
  for (int y = std::max(0, c.y - span); y <= std::min(t.height - 1, c.y + span); ++y)
    for (int x = std::max(0, c.x - span); x <= std::min(t.width - 1, c.x + span); ++x) {
      if (!grid.ok(x, y)) continue;
      const double cost = field ? field->at(x, y) : 0.0;
      if (cost == kInf) continue;
      const double d = (t.center(x, y) - p).norm();
      if (d > radius) continue;
      if (d < best_d || (d == best_d && cost < best_cost)) {
        best = CellIndex{x, y};
        best_d = d;
        best_cost = cost;
      }
    }
  return best;
}

// ---------------------------------------------------------------------------

std::vector<AlcCandidate> build_alc_candidates(const PoseGraph& graph, std::optional<RegionId> region,
                                               const AlcParams& params) {
  std::vector<const Keyframe*> members;
  for (const auto& [id, kf] : graph.keyframes())
    if (!region || kf.region_id == region) members.push_back(&kf);

  std::vector<AlcCandidate> out;
  std::vector<bool> assigned(members.size(), false);
  for (std::size_t seed = 0; seed < members.size(); ++seed) {
    if (assigned[seed]) continue;
    const Eigen::Vector2d seed_xy = members[seed]->pose.translation();
    std::vector<std::size_t> cluster;
    for (std::size_t j = 0; j < members.size(); ++j)
      if (!assigned[j] && (members[j]->pose.translation() - seed_xy).norm() <= params.cluster_radius) cluster.push_back(j);

    // Drop members the centroid has moved away from until all lie within the radius.
    Eigen::Vector2d centroid;
    for (;;) {
      centroid.setZero();
      for (std::size_t j : cluster) centroid += members[j]->pose.translation();
      centroid /= static_cast<double>(cluster.size());
      std::vector<std::size_t> kept;
      for (std::size_t j : cluster)
        if ((members[j]->pose.translation() - centroid).norm() <= params.cluster_radius) kept.push_back(j);
      if (kept.size() == cluster.size()) break;
      cluster = std::move(kept);
    }

    double score = 0, s = 0, c = 0;
    for (std::size_t j : cluster) {
      assigned[j] = true;
      score += members[j]->feature_score;
      s += std::sin(members[j]->pose.theta);
      c += std::cos(members[j]->pose.theta);
    }
    if (score / static_cast<double>(cluster.size()) < params.min_feature_score) continue;

    AlcCandidate cand;
    cand.centroid_pose = Pose2(centroid.x(), centroid.y(), std::atan2(s, c));
    double best = kInf;
    for (std::size_t j : cluster) {
      cand.keyframe_ids.push_back(members[j]->id);
      const double d = (members[j]->pose.translation() - centroid).norm();
      if (d < best) {
        best = d;
        cand.representative = members[j]->id;
      }
    }
    out.push_back(std::move(cand));
  }
  return out;
}

std::optional<AlcSelection> select_alc_target(const PoseGraph& graph, VertexId robot,
                                              const std::vector<AlcCandidate>& candidates, const AlcParams& params,
                                              const PathLengthFn& path_length,
                                              const InfoMatrix3& closure_information, std::vector<double>* scored) {
  if (candidates.empty()) return std::nullopt;
  CovarianceRecovery cov(graph);
  std::optional<AlcSelection> best;
  for (const auto& cand : candidates) {
    if (cand.representative == robot) continue;
    double du = 0;
    try {
      du = uncertainty_reduction(cov.relative(robot, cand.representative), closure_information);
    } catch (const GraphError&) {
      continue;  // numerically singular relative covariance: nothing to gain
    }
    if (scored) scored->push_back(du);
    const std::optional<double> len = path_length(cand);
    if (!len) continue;
    const double score = du - params.distance_weight * *len;
    if (!best || score > best->score) best = AlcSelection{cand, du, score, *len};
  }
  if (best && best->delta_u > params.threshold) return best;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::vector<Eigen::Vector2d> convex_hull(const std::vector<Eigen::Vector2d>& points) {
  std::vector<Eigen::Vector2d> pts = points;
  std::sort(pts.begin(), pts.end(), lex_less);
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() <= 2) return pts;

  const Eigen::Vector2d a = pts.front(), b = pts.back();
  std::vector<Eigen::Vector2d> below, above;
  for (const auto& p : pts) {
    const double c = cross(a, b, p);
    if (c < 0) below.push_back(p);
    else if (c > 0) above.push_back(p);
  }
  std::vector<Eigen::Vector2d> hull{a};
  quickhull(a, b, below, hull);
  hull.push_back(b);
  quickhull(b, a, above, hull);
  return hull;
}

Tour pgs_tour(const std::vector<Eigen::Vector2d>& hull, const PlanningGrid& grid, const Grid<double>& field,
              const Pose2& robot, double projection_radius) {
  if (hull.empty()) throw PlanningError("empty hull");
  Tour tour;
  std::vector<Eigen::Vector2d> projected;
  for (const auto& v : hull) {
    const auto cell = nearest_reachable_cell(grid, &field, v, projection_radius);
    if (!cell) {
      ++tour.skipped;
      continue;
    }
    projected.push_back(grid.traversable.center(*cell));
  }
  if (projected.empty()) throw PlanningError("no reachable hull vertex");

  const std::size_t n = projected.size();
  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i)
    if ((projected[i] - robot.translation()).norm() < (projected[start] - robot.translation()).norm()) start = i;
  for (std::size_t k = 0; k < n; ++k) tour.waypoints.push_back(projected[(start + k) % n]);
  for (std::size_t k = 0; k < n; ++k) tour.waypoints.push_back(projected[(start + n - k) % n]);
  return tour;
}

// ---------------------------------------------------------------------------

Region* ExplorationState::find_region(RegionId id) {
  for (auto& r : regions)
    if (r.id == id) return &r;
  return nullptr;
}

const Region* ExplorationState::find_region(RegionId id) const {
  return const_cast<ExplorationState*>(this)->find_region(id);
}

std::set<RegionId> ExplorationState::completed_regions() const {
  std::set<RegionId> out;
  for (const auto& r : regions)
    if (r.phase == RegionPhase::completed) out.insert(r.id);
  return out;
}

RegionId ExplorationState::next_region_id() const {
  RegionId id = 0;
  for (const auto& r : regions) id = std::max(id, r.id);
  return id + 1;
}

Explorer::Explorer(ExplorerParams params, const Eigen::Vector2d& start) : params_(std::move(params)) {
  if (params_.use_regions) {
    state_.regions.push_back(make_region(1, start, params_.limits));
    state_.active_region = 1;
  }
}

Explorer::Explorer(ExplorerParams params, ExplorationState state)
    : params_(std::move(params)), state_(std::move(state)) {}

void Explorer::restart_at(const Eigen::Vector2d& center) {
  // an interrupted region never completed; its ledger entry goes with it
  if (state_.active_region) {
    const RegionId id = *state_.active_region;
    std::erase_if(state_.regions, [&](const Region& r) { return r.id == id && r.phase != RegionPhase::completed; });
  }
  state_.active_region.reset();
  if (params_.use_regions) {
    const RegionId id = state_.next_region_id();
    state_.regions.push_back(make_region(id, center, params_.limits));
    state_.active_region = id;
  }
  state_.phase = ExplorationPhase::region_discovery;
  state_.awaiting_new_region = false;
  state_.previous_frontier.reset();
  state_.tour.clear();
  state_.tour_index = 0;
  state_.stalled_cycles = 0;
  state_.alc_commitment.reset();
}

bool Explorer::blacklisted(const Eigen::Vector2d& p) const {
  return std::any_of(state_.blacklist.begin(), state_.blacklist.end(),
                     [&](const Eigen::Vector2d& b) { return (b - p).norm() <= params_.blacklist_radius; });
}

bool Explorer::stalled(const Eigen::Vector2d& position, const Eigen::Vector2d& goal) {
  const bool same_goal = (goal - state_.last_goal).norm() <= params_.blacklist_radius;
  const bool moved = (position - state_.last_position).norm() >= 0.05;
  state_.stalled_cycles = same_goal && !moved ? state_.stalled_cycles + 1 : 0;
  state_.last_goal = goal;
  state_.last_position = position;
  if (state_.stalled_cycles < static_cast<std::uint32_t>(params_.stall_limit)) return false;
  state_.stalled_cycles = 0;
  return true;
}

std::vector<Frontier> Explorer::reachable_frontiers(const PlanningContext& ctx, const Grid<double>& field,
                                                    const std::optional<Rect>& rect,
                                                    std::vector<CellIndex>* goals) const {
  std::vector<Frontier> out;
  std::vector<Frontier> pieces;
  for (const auto& component : detect_frontiers(ctx.map)) {
    if (component.size() < params_.min_frontier_size) continue;
    for (auto& piece : split_frontier(component, ctx.map, params_.frontier_segment))
      if (!rect || rect->contains(piece.centroid)) pieces.push_back(std::move(piece));
  }
  for (auto& f : pieces) {
    const auto goal = nearest_reachable_cell(ctx.grid, &field, f.centroid, params_.projection_radius);
    if (!goal || blacklisted(ctx.grid.traversable.center(*goal))) continue;
    if (goals) goals->push_back(*goal);
    out.push_back(std::move(f));
  }
  return out;
}

Action Explorer::navigate_to(const PlanningContext& ctx, CellIndex start, CellIndex goal, PlannerKind planner) {
  const auto& t = ctx.grid.traversable;
  Action a;
  a.kind = Action::Kind::navigate;
  a.planner = planner;
  a.target = t.center(goal);
  a.path = plan_path(ctx.grid, t.center(start), a.target);
  if (state_.active_region) a.region = *state_.active_region;
  return a;
}

Action Explorer::planning_cycle(const PlanningContext& ctx) {
  if (state_.phase == ExplorationPhase::done || state_.phase == ExplorationPhase::failed)
    throw PlanningError("exploration already terminated");

  const auto start = nearest_reachable_cell(ctx.grid, nullptr, ctx.robot.translation(), params_.projection_radius);
  if (!start) {
    state_.phase = ExplorationPhase::failed;
    Action a;
    a.kind = Action::Kind::fail;
    a.reason = "no path: robot is not in traversable space";
    return a;
  }
  const Grid<double> field = dijkstra(ctx.grid, *start);

  try {
    if (state_.awaiting_new_region) return after_region(ctx, field, *start);
    switch (state_.phase) {
      case ExplorationPhase::region_discovery: return discovery(ctx, field, *start);
      case ExplorationPhase::region_refinement: return tour_step(ctx, field, *start, PlannerKind::pgs);
      case ExplorationPhase::global_stabilization: return tour_step(ctx, field, *start, PlannerKind::global);
      default: break;
    }
  } catch (const PlanningError& e) {
    state_.phase = ExplorationPhase::failed;
    Action a;
    a.kind = Action::Kind::fail;
    a.reason = e.what();
    return a;
  }
  throw PlanningError("unreachable exploration phase");
}

Action Explorer::discovery(const PlanningContext& ctx, const Grid<double>& field, CellIndex start) {
  const auto& t = ctx.grid.traversable;
  const Eigen::Vector2d robot_xy = ctx.robot.translation();
  std::optional<Rect> rect;
  std::optional<RegionId> region_id;
  if (params_.use_regions) {
    Region* region = state_.find_region(*state_.active_region);
    *region = grow_region(*region, robot_xy, params_.grow_radius, params_.limits);
    rect = region->rect;
    region_id = region->id;
  }

  // A started loop-closure excursion ends only on arrival or stall; re-deciding every cycle lets
  // the uncertainty gain flip with each step and livelocks between two goals.
  if (state_.alc_commitment) {
    const VertexId rep = *state_.alc_commitment;
    std::optional<CellIndex> goal;
    if (ctx.graph.contains(rep) && !state_.attempted_alc.count(rep))
      goal = nearest_reachable_cell(ctx.grid, &field, ctx.graph.keyframe(rep).pose.translation(),
                                    params_.projection_radius);
    if (goal && field.at(*goal) > params_.goal_tolerance && !stalled(robot_xy, t.center(*goal))) {
      Action a = navigate_to(ctx, start, *goal, PlannerKind::alc);
      a.alc_representative = rep;
      return a;
    }
    state_.attempted_alc.insert(rep);
    state_.alc_commitment.reset();
  }

  // Active loop closure takes precedence over frontiers.
  std::vector<AlcCandidate> candidates;
  for (auto& c : build_alc_candidates(ctx.graph, region_id, params_.alc))
    if (!state_.attempted_alc.count(c.representative)) candidates.push_back(std::move(c));
  std::vector<double> delta_u;
  auto goal_of = [&](const AlcCandidate& c) {
    return nearest_reachable_cell(ctx.grid, &field, ctx.graph.keyframe(c.representative).pose.translation(),
                                  params_.projection_radius);
  };
  const auto selection = select_alc_target(
      ctx.graph, ctx.robot_keyframe, candidates, params_.alc,
      [&](const AlcCandidate& c) -> std::optional<double> {
        const auto g = goal_of(c);
        if (!g) return std::nullopt;
        return field.at(*g);
      },
      params_.closure_information, &delta_u);
  if (selection) {
    const CellIndex goal = *goal_of(selection->target);
    const bool arrived = field.at(goal) <= params_.goal_tolerance;
    if (arrived || stalled(robot_xy, t.center(goal))) {
      state_.attempted_alc.insert(selection->target.representative);
    } else {
      Action a = navigate_to(ctx, start, goal, PlannerKind::alc);
      a.alc_representative = selection->target.representative;
      state_.alc_commitment = selection->target.representative;
      a.delta_u = std::move(delta_u);
      return a;
    }
  }

  std::vector<CellIndex> goals;
  std::vector<Frontier> frontiers = reachable_frontiers(ctx, field, rect, &goals);
  for (;;) {
    std::optional<std::size_t> best;
    double best_cost = kInf;
    for (std::size_t i = 0; i < frontiers.size(); ++i) {
      if (blacklisted(t.center(goals[i]))) continue;
      const double cost = frontier_cost(frontiers[i], ctx.robot, field.at(goals[i]), state_.previous_frontier,
                                        params_.weights);
      if (cost < best_cost) {
        best_cost = cost;
        best = i;
      }
    }
    if (!best) break;
    const CellIndex goal = goals[*best];
    // A frontier that persists once reached, or that the robot cannot approach, is abandoned.
    if (field.at(goal) <= params_.goal_tolerance || stalled(robot_xy, t.center(goal))) {
      state_.blacklist.push_back(t.center(goal));
      continue;
    }
    state_.previous_frontier = frontiers[*best];
    Action a = navigate_to(ctx, start, goal, PlannerKind::frontier);
    a.delta_u = std::move(delta_u);
    return a;
  }

  state_.previous_frontier.reset();
  if (!params_.use_regions) {
    state_.phase = ExplorationPhase::done;
    Action a;
    a.kind = Action::Kind::finish;
    return a;
  }
  return begin_refinement(ctx, field, start);
}

Action Explorer::begin_refinement(const PlanningContext& ctx, const Grid<double>& field, CellIndex start) {
  Region* region = state_.find_region(*state_.active_region);
  region->phase = RegionPhase::refining;
  state_.phase = ExplorationPhase::region_refinement;
  state_.alc_commitment.reset();

  std::vector<Eigen::Vector2d> points;
  for (const auto& [id, kf] : ctx.graph.keyframes())
    if (kf.region_id == region->id) points.push_back(kf.pose.translation());
  if (points.empty()) {
    region->phase = RegionPhase::completed;
    state_.awaiting_new_region = true;
    Action a;
    a.kind = Action::Kind::mark_region_complete;
    a.region = region->id;
    return a;
  }
  const Tour tour = pgs_tour(convex_hull(points), ctx.grid, field, ctx.robot, params_.projection_radius);
  state_.tour = tour.waypoints;
  state_.tour_index = 0;
  Action a = tour_step(ctx, field, start, PlannerKind::pgs);
  a.skipped_waypoints += tour.skipped;
  return a;
}

Action Explorer::tour_step(const PlanningContext& ctx, const Grid<double>& field, CellIndex start,
                           PlannerKind planner) {
  const auto& t = ctx.grid.traversable;
  Action a;
  while (state_.tour_index < state_.tour.size()) {
    const auto goal = nearest_reachable_cell(ctx.grid, &field, state_.tour[state_.tour_index], params_.projection_radius);
    if (!goal) {
      ++a.skipped_waypoints;
      ++state_.tour_index;
      continue;
    }
    if (field.at(*goal) <= params_.goal_tolerance || stalled(ctx.robot.translation(), t.center(*goal))) {
      ++state_.tour_index;
      continue;
    }
    const int skipped = a.skipped_waypoints;
    a = navigate_to(ctx, start, *goal, planner);
    a.skipped_waypoints = skipped;
    return a;
  }
  state_.tour.clear();
  state_.tour_index = 0;

  if (planner == PlannerKind::global) {
    state_.phase = ExplorationPhase::done;
    a.kind = Action::Kind::finish;
    return a;
  }
  Region* region = state_.find_region(*state_.active_region);
  region->phase = RegionPhase::completed;
  state_.awaiting_new_region = true;
  a.kind = Action::Kind::mark_region_complete;
  a.region = region->id;
  return a;
}

Action Explorer::after_region(const PlanningContext& ctx, const Grid<double>& field, CellIndex start) {
  state_.awaiting_new_region = false;
  state_.active_region.reset();

  std::vector<CellIndex> goals;
  const std::vector<Frontier> global = reachable_frontiers(ctx, field, std::nullopt, &goals);
  if (global.empty()) {
    state_.phase = ExplorationPhase::global_stabilization;
    std::vector<Eigen::Vector2d> points;
    for (const auto& [id, kf] : ctx.graph.keyframes()) points.push_back(kf.pose.translation());
    const Tour tour = pgs_tour(convex_hull(points), ctx.grid, field, ctx.robot, params_.projection_radius);
    state_.tour = tour.waypoints;
    state_.tour_index = 0;
    Action a;
    a.kind = Action::Kind::start_global_stabilization;
    a.skipped_waypoints = tour.skipped;
    return a;
  }

  const RegionId id = state_.next_region_id();
  Region region = make_region(id, ctx.robot.translation(), params_.limits);
  const bool local_work = std::any_of(global.begin(), global.end(),
                                      [&](const Frontier& f) { return region.rect.contains(f.centroid); });
  if (!local_work) {
    // nothing to discover around the robot: seed at the closest remaining frontier instead
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < goals.size(); ++i)
      if (field.at(goals[i]) < field.at(goals[nearest])) nearest = i;
    region = make_region(id, ctx.grid.traversable.center(goals[nearest]), params_.limits);
  }
  state_.regions.push_back(region);
  state_.active_region = id;
  state_.phase = ExplorationPhase::region_discovery;
  return discovery(ctx, field, start);
}

}  // namespace ralc
