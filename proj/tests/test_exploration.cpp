#include <doctest.h>

#include <ralc/exploration.hpp>
#include <ralc/random.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

using namespace ralc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

OccupancyMap box_map(int w, int h, double res = 0.05) {
  OccupancyMap m(w, h, res, Eigen::Vector2d::Zero(), CellState::free);
  for (int x = 0; x < w; ++x) m.at(x, 0) = m.at(x, h - 1) = CellState::occupied;
  for (int y = 0; y < h; ++y) m.at(0, y) = m.at(w - 1, y) = CellState::occupied;
  return m;
}

OccupancyMap random_map(Rng& rng, int w, int h, double p_occ, double p_unknown) {
  OccupancyMap m(w, h, 0.05, Eigen::Vector2d::Zero());
  for (auto& c : m.cells) {
    const double u = rng.uniform();
    c = u < p_occ ? CellState::occupied : (u < p_occ + p_unknown ? CellState::unknown : CellState::free);
  }
  return m;
}

// Flood fill from every unlabeled frontier cell, using an explicit queue and 8-neighborhood.
std::vector<std::set<CellIndex>> flood_fill_frontiers(const OccupancyMap& m) {
  auto frontier = [&](int x, int y) {
    if (!m.in_bounds(x, y) || m.at(x, y) != CellState::unknown) return false;
    const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k)
      if (m.in_bounds(x + dx[k], y + dy[k]) && m.at(x + dx[k], y + dy[k]) == CellState::free) return true;
    return false;
  };
  std::map<CellIndex, int> label;
  std::vector<std::set<CellIndex>> out;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!frontier(x, y) || label.count({x, y})) continue;
      std::set<CellIndex> comp;
      std::vector<CellIndex> queue{{x, y}};
      label[{x, y}] = static_cast<int>(out.size());
      for (std::size_t q = 0; q < queue.size(); ++q) {
        comp.insert(queue[q]);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const CellIndex n{queue[q].x + dx, queue[q].y + dy};
            if ((dx || dy) && frontier(n.x, n.y) && !label.count(n)) {
              label[n] = static_cast<int>(out.size());
              queue.push_back(n);
            }
          }
      }
      out.push_back(comp);
    }
  return out;
}

// Textbook Dijkstra over an explicit adjacency list with a std::set frontier.
std::vector<double> dijkstra_oracle(const PlanningGrid& g, CellIndex s) {
  const auto& t = g.traversable;
  std::vector<double> dist(t.cells.size(), kInf);
  if (!g.ok(s.x, s.y)) return dist;
  std::set<std::pair<double, std::size_t>> open;
  dist[t.index(s.x, s.y)] = 0;
  open.insert({0.0, t.index(s.x, s.y)});
  while (!open.empty()) {
    const auto [d, i] = *open.begin();
    open.erase(open.begin());
    const int x = int(i % t.width), y = int(i / t.width);
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy) continue;
        if (!g.ok(x + dx, y + dy)) continue;
        if (dx && dy && (!g.ok(x + dx, y) || !g.ok(x, y + dy))) continue;
        const std::size_t j = t.index(x + dx, y + dy);
        const double nd = d + t.resolution * ((dx && dy) ? std::sqrt(2.0) : 1.0);
        if (nd < dist[j]) {
          open.erase({dist[j], j});
          dist[j] = nd;
          open.insert({nd, j});
        }
      }
  }
  return dist;
}

// O(n^3): a directed pair is a hull edge iff no point lies strictly to its right and
// collinear points lie between its endpoints.
std::set<std::pair<double, double>> brute_hull(const std::vector<Eigen::Vector2d>& pts) {
  std::set<std::pair<double, double>> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (pts[i] == pts[j]) continue;
      bool edge = true;
      for (std::size_t k = 0; k < pts.size() && edge; ++k) {
        const Eigen::Vector2d a = pts[j] - pts[i], b = pts[k] - pts[i];
        const double c = a.x() * b.y() - a.y() * b.x();
        if (c < 0) edge = false;
        if (c == 0 && (b.dot(a) < 0 || b.dot(a) > a.dot(a))) edge = false;
      }
      if (edge) {
        out.insert({pts[i].x(), pts[i].y()});
        out.insert({pts[j].x(), pts[j].y()});
      }
    }
  return out;
}

double signed_area(const std::vector<Eigen::Vector2d>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

PoseGraph chain(const std::vector<Eigen::Vector2d>& xy, double sigma, std::optional<RegionId> region = 1,
                double score = 1.0) {
  PoseGraph g;
  const InfoMatrix3 info = Eigen::Vector3d(1 / (sigma * sigma), 1 / (sigma * sigma), 1 / (sigma * sigma)).asDiagonal();
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const Pose2 p(xy[i].x(), xy[i].y(), 0.0);
    if (i == 0) g.add_keyframe(p, std::nullopt, region, score);
    else g.add_keyframe(p, OdometryLink{VertexId(i - 1), between(g.keyframe(VertexId(i - 1)).pose, p), info}, region, score);
  }
  return g;
}

}  // namespace

TEST_CASE("grow_region covers the robot disk minimally within size limits") {
  const RegionLimits lim;
  Region r = make_region(1, {5, 5}, lim);
  CHECK(r.rect.width() == doctest::Approx(4.0));

  CHECK(grow_region(r, {5, 5}, 2.0, lim) == r);

  // robot at the right edge: x_max grows by exactly the overhang
  const Region right = grow_region(r, {6.5, 5}, 2.0, lim);
  CHECK(right.rect.x_max == doctest::Approx(8.5));
  CHECK(right.rect.x_min == r.rect.x_min);
  CHECK(right.rect.y_min == r.rect.y_min);
  CHECK(right.rect.y_max == r.rect.y_max);

  Region full = r;
  full.rect.x_min = 0;
  full.rect.x_max = 8;
  const Region clamped = grow_region(full, {30, 5}, 2.0, lim);
  CHECK(clamped.rect.x_min == 0);
  CHECK(clamped.rect.x_max == 8);

  Region refining = r;
  refining.phase = RegionPhase::refining;
  CHECK_THROWS_AS(grow_region(refining, {5, 5}, 2.0, lim), PlanningError);

  // Interval oracle: when the covering interval fits, the result is exactly the hull of rect and disk.
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    Region cur = make_region(1, {rng.uniform() * 10, rng.uniform() * 10}, lim);
    for (int step = 0; step < 5; ++step) {
      const Eigen::Vector2d p(cur.rect.center().x() + (rng.uniform() - 0.5) * 8,
                              cur.rect.center().y() + (rng.uniform() - 0.5) * 8);
      const Region next = grow_region(cur, p, 2.0, lim);
      CHECK(next.rect.x_min <= cur.rect.x_min);
      CHECK(next.rect.x_max >= cur.rect.x_max);
      CHECK(next.rect.width() <= lim.w_max + 1e-12);
      CHECK(next.rect.height() <= lim.h_max + 1e-12);
      CHECK(next.rect.width() >= lim.w_min - 1e-12);
      const double lo = std::min(cur.rect.x_min, p.x() - 2), hi = std::max(cur.rect.x_max, p.x() + 2);
      if (hi - lo <= lim.w_max) {
        CHECK(next.rect.x_min == doctest::Approx(lo));
        CHECK(next.rect.x_max == doctest::Approx(hi));
      }
      cur = next;
    }
  }
}

TEST_CASE("frontiers match a flood-fill oracle") {
  OccupancyMap known = box_map(20, 20);
  CHECK(detect_frontiers(known).empty());

  OccupancyMap one = known;
  one.at(5, 5) = CellState::unknown;
  const auto single = detect_frontiers(one);
  REQUIRE(single.size() == 1);
  CHECK(single[0].size() == 1);

  // three separated unknown pockets
  OccupancyMap pockets = box_map(40, 20);
  for (int y = 3; y < 6; ++y)
    for (int x = 3; x < 7; ++x) pockets.at(x, y) = CellState::unknown;
  for (int y = 10; y < 15; ++y)
    for (int x = 15; x < 18; ++x) pockets.at(x, y) = CellState::unknown;
  pockets.at(30, 10) = CellState::unknown;
  const auto found = detect_frontiers(pockets);
  const auto oracle = flood_fill_frontiers(pockets);
  REQUIRE(found.size() == 3);
  REQUIRE(oracle.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::set<CellIndex>(found[i].cells.begin(), found[i].cells.end()) == oracle[i]);

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const OccupancyMap m = random_map(rng, 10 + int(rng.uniform() * 40), 10 + int(rng.uniform() * 40), 0.2, 0.4);
    const auto f = detect_frontiers(m);
    const auto o = flood_fill_frontiers(m);
    REQUIRE(f.size() == o.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      CHECK(std::set<CellIndex>(f[i].cells.begin(), f[i].cells.end()) == o[i]);
      Eigen::Vector2d c = Eigen::Vector2d::Zero();
      for (const auto& cell : o[i]) c += m.center(cell);
      CHECK((f[i].centroid - c / double(o[i].size())).norm() < 1e-12);
    }
  }

  // region filter keeps only frontiers with the centroid inside
  const Rect rect{0, 0, 0.6, 0.6};
  const auto filtered = detect_frontiers(pockets, rect);
  REQUIRE(filtered.size() == 1);
  CHECK(rect.contains(filtered[0].centroid));
}

TEST_CASE("frontier splitting partitions a component by tile") {
  OccupancyMap ring(200, 200, 0.05, Eigen::Vector2d(-0.3, 0.0), CellState::unknown);
  for (int y = 40; y < 160; ++y)
    for (int x = 40; x < 160; ++x) ring.at(x, y) = CellState::free;
  const auto comps = detect_frontiers(ring);
  REQUIRE(comps.size() == 1);  // the ring closes through its corners
  const auto pieces = split_frontier(comps[0], ring, 1.0);
  std::set<CellIndex> seen;
  for (const auto& p : pieces) {
    const Eigen::Vector2d first = ring.center(p.cells.front());
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    for (const auto& c : p.cells) {
      CHECK(seen.insert(c).second);
      const Eigen::Vector2d q = ring.center(c);
      CHECK(std::floor(q.x()) == std::floor(first.x()));
      CHECK(std::floor(q.y()) == std::floor(first.y()));
      sum += q;
    }
    CHECK((p.centroid - sum / double(p.size())).norm() < 1e-12);
  }
  CHECK(seen.size() == comps[0].cells.size());
}

TEST_CASE("frontier cost terms") {
  const FrontierWeights w;
  Frontier f;
  f.cells = {{10, 10}, {10, 11}, {11, 10}};
  f.centroid = {1.0, 1.0};
  CHECK(frontier_cost(f, Pose2(1.0, 1.0, 0.3), 0.0, f, w) == doctest::Approx(-w.size * 3));

  Frontier ahead = f, behind = f;
  ahead.centroid = {3.0, 1.0};
  behind.centroid = {-1.0, 1.0};
  ahead.cells = {{60, 20}, {60, 21}, {61, 20}};
  behind.cells = {{-20, 20}, {-20, 21}, {-19, 20}};
  const Pose2 robot(1.0, 1.0, 0.0);
  CHECK(frontier_cost(ahead, robot, 2.0, std::nullopt, w) < frontier_cost(behind, robot, 2.0, std::nullopt, w));

  // switching away from the previous target costs beta_3
  CHECK(frontier_cost(ahead, robot, 2.0, behind, w) - frontier_cost(ahead, robot, 2.0, std::nullopt, w) ==
        doctest::Approx(w.sw));
}

TEST_CASE("planning grid inflation matches a brute-force clearance scan") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    OccupancyMap m = random_map(rng, 30, 25, 0.03, 0.3);
    const PlanningGrid g = make_planning_grid(m, 0.22);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        double clearance = kInf;
        for (int v = 0; v < m.height; ++v)
          for (int u = 0; u < m.width; ++u)
            if (m.at(u, v) == CellState::occupied)
              clearance = std::min(clearance, std::hypot(double(x - u), double(y - v)) * m.resolution);
        const bool expected = m.at(x, y) == CellState::free && clearance >= 0.22;
        CHECK(g.ok(x, y) == expected);
      }
  }
}

TEST_CASE("A* and Dijkstra agree with an independent Dijkstra oracle") {
  PlanningGrid open;
  open.traversable = Grid<std::uint8_t>(20, 5, 0.05, Eigen::Vector2d::Zero(), 1);
  const auto same = plan_path(open, {0.52, 0.12}, {0.51, 0.13});
  CHECK(same.size() == 1);
  CHECK(path_length(same) == 0.0);
  const auto straight = plan_path(open, open.traversable.center(2, 2), open.traversable.center(12, 2));
  CHECK(path_length(straight) == doctest::Approx(10 * 0.05));

  Rng rng(17);
  int compared = 0;
  for (int trial = 0; trial < 60; ++trial) {
    PlanningGrid g;
    g.traversable = Grid<std::uint8_t>(30 + trial % 7, 25, 0.05, Eigen::Vector2d::Zero(), 1);
    for (auto& c : g.traversable.cells) c = rng.uniform() < 0.3 ? 0 : 1;
    const CellIndex s{int(rng.uniform() * g.traversable.width), int(rng.uniform() * g.traversable.height)};
    const CellIndex t{int(rng.uniform() * g.traversable.width), int(rng.uniform() * g.traversable.height)};
    g.traversable.at(s) = g.traversable.at(t) = 1;

    const auto oracle = dijkstra_oracle(g, s);
    const Grid<double> field = dijkstra(g, s);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      if (oracle[i] == kInf) CHECK(field.cells[i] == kInf);
      else CHECK(field.cells[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }

    const double expected = oracle[g.traversable.index(t.x, t.y)];
    if (expected == kInf) {
      CHECK_THROWS_AS(plan_path(g, g.traversable.center(s), g.traversable.center(t)), PlanningError);
      continue;
    }
    const auto path = plan_path(g, g.traversable.center(s), g.traversable.center(t));
    CHECK(path_length(path) == doctest::Approx(expected).epsilon(1e-12));
    for (std::size_t i = 1; i < path.size(); ++i) {
      const CellIndex a = g.traversable.cell_of(path[i - 1]), b = g.traversable.cell_of(path[i]);
      CHECK(std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)) == 1);
      CHECK(g.ok(b.x, b.y));
    }
    ++compared;
  }
  CHECK(compared > 20);

  PlanningGrid blocked = open;
  blocked.traversable.at(5, 2) = 0;
  CHECK_THROWS_AS(plan_path(blocked, blocked.traversable.center(5, 2), blocked.traversable.center(8, 2)), PlanningError);
}

TEST_CASE("nearest reachable cell matches a brute-force scan") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    PlanningGrid g;
    g.traversable = Grid<std::uint8_t>(40, 40, 0.05, Eigen::Vector2d(-1.0, -1.0), 1);
    for (auto& c : g.traversable.cells) c = rng.uniform() < 0.6 ? 0 : 1;
    const CellIndex s{20, 20};
    g.traversable.at(s) = 1;
    const Grid<double> field = dijkstra(g, s);
    const Eigen::Vector2d p(-1.0 + rng.uniform() * 2.0, -1.0 + rng.uniform() * 2.0);

    double best = kInf;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x)
        if (g.ok(x, y) && field.at(x, y) < kInf) {
          const double d = (g.traversable.center(x, y) - p).norm();
          if (d <= 1.0) best = std::min(best, d);
        }
    const auto got = nearest_reachable_cell(g, &field, p, 1.0);
    if (best == kInf) {
      CHECK_FALSE(got.has_value());
    } else {
      REQUIRE(got.has_value());
      CHECK((g.traversable.center(*got) - p).norm() == best);
    }
  }
}

TEST_CASE("ALC candidate clustering") {
  CHECK(build_alc_candidates(PoseGraph{}, 1).empty());
  CHECK(build_alc_candidates(chain({{0, 0}, {1, 0}}, 0.1, 2), 1).empty());

  const auto pair = build_alc_candidates(chain({{0, 0}, {0.5, 0}}, 0.1), 1);
  REQUIRE(pair.size() == 1);
  CHECK(pair[0].keyframe_ids.size() == 2);

  // 3 m grid: no two keyframes can share a cluster
  std::vector<Eigen::Vector2d> grid_xy;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) grid_xy.emplace_back(3.0 * i, 3.0 * j);
  const auto spread = build_alc_candidates(chain(grid_xy, 0.1), 1);
  std::size_t oracle = 0;
  for (std::size_t i = 0; i < grid_xy.size(); ++i) {
    bool alone = true;
    for (std::size_t j = 0; j < grid_xy.size(); ++j)
      if (i != j && (grid_xy[i] - grid_xy[j]).norm() <= 1.0) alone = false;
    oracle += alone;
  }
  CHECK(spread.size() == oracle);
  CHECK(spread.size() == grid_xy.size());

  CHECK(build_alc_candidates(chain({{0, 0}, {0.5, 0}}, 0.1, 1, 0.2), 1).empty());

  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Eigen::Vector2d> xy;
    const int n = 5 + int(rng.uniform() * 30);
    for (int i = 0; i < n; ++i) xy.emplace_back(rng.uniform() * 5, rng.uniform() * 5);
    PoseGraph g = chain(xy, 0.1);
    for (auto& [id, kf] : g.keyframes()) g.keyframe(id).feature_score = rng.uniform();
    std::set<VertexId> used;
    for (const auto& c : build_alc_candidates(g, 1)) {
      double score = 0;
      for (VertexId v : c.keyframe_ids) {
        CHECK(used.insert(v).second);
        CHECK((g.keyframe(v).pose.translation() - c.centroid_pose.translation()).norm() <= 1.0 + 1e-12);
        score += g.keyframe(v).feature_score;
      }
      CHECK(score / double(c.keyframe_ids.size()) >= 0.3);
      const double rep_d = (g.keyframe(c.representative).pose.translation() - c.centroid_pose.translation()).norm();
      for (VertexId v : c.keyframe_ids)
        CHECK(rep_d <= (g.keyframe(v).pose.translation() - c.centroid_pose.translation()).norm());
    }
  }
}

TEST_CASE("ALC target selection") {
  const AlcParams params;
  const InfoMatrix3 closure = default_closure_information();
  auto unit = [](const AlcCandidate&) -> std::optional<double> { return 1.0; };
  PoseGraph g = chain({{0, 0}, {1, 0}, {2, 0}, {3, 0}}, 0.001);
  CHECK_FALSE(select_alc_target(g, 3, {}, params, unit, closure).has_value());

  // tight odometry: nothing to gain, the frontier planner keeps control
  AlcCandidate c0;
  c0.keyframe_ids = {0};
  c0.representative = 0;
  std::vector<double> seen;
  CHECK_FALSE(select_alc_target(g, 3, {c0}, params, unit, closure, &seen).has_value());
  REQUIRE(seen.size() == 1);
  CHECK(seen[0] < params.threshold);

  // symmetric star around the robot: equal delta_u, nearer wins
  PoseGraph star;
  const InfoMatrix3 weak = Eigen::Vector3d(25, 25, 25).asDiagonal();
  star.add_keyframe(Pose2(0, 0, 0), std::nullopt);
  star.add_keyframe(Pose2(-2, 0, 0), OdometryLink{0, Pose2(-2, 0, 0), weak});
  star.add_keyframe(Pose2(2, 0, 0), OdometryLink{0, Pose2(2, 0, 0), weak});
  star.add_keyframe(Pose2(0, 1, 0), OdometryLink{0, Pose2(0, 1, 0), weak});
  AlcCandidate left, right;
  left.representative = 1;
  right.representative = 2;
  auto lengths = [](const AlcCandidate& c) -> std::optional<double> { return c.representative == 1 ? 5.0 : 2.0; };
  std::vector<double> du;
  const auto chosen = select_alc_target(star, 3, {left, right}, params, lengths, closure, &du);
  REQUIRE(du.size() == 2);
  CHECK(du[0] == doctest::Approx(du[1]).epsilon(1e-9));
  REQUIRE(chosen.has_value());
  CHECK(chosen->target.representative == 2);

  // exhaustive score ordering
  Rng rng(31);
  std::vector<Eigen::Vector2d> xy;
  for (int i = 0; i < 12; ++i) xy.emplace_back(i * 0.8, std::sin(i));
  PoseGraph line = chain(xy, 0.3);
  std::vector<AlcCandidate> cands;
  std::map<VertexId, double> len;
  for (VertexId v = 0; v < 11; ++v) {
    AlcCandidate c;
    c.representative = v;
    cands.push_back(c);
    len[v] = rng.uniform() * 30;
  }
  PathLengthFn fn = [&](const AlcCandidate& c) -> std::optional<double> { return len[c.representative]; };
  const auto best = select_alc_target(line, 11, cands, params, fn, closure);
  double top = -kInf;
  VertexId arg = -1;
  double arg_du = 0;
  for (const auto& c : cands) {
    const double d = uncertainty_reduction(line, 11, c.representative, closure);
    const double s = d - params.distance_weight * len[c.representative];
    if (s > top) {
      top = s;
      arg = c.representative;
      arg_du = d;
    }
  }
  if (arg_du > params.threshold) {
    REQUIRE(best.has_value());
    CHECK(best->target.representative == arg);
  } else {
    CHECK_FALSE(best.has_value());
  }
}

TEST_CASE("convex hull matches a brute-force oracle") {
  const auto tri = convex_hull({{0, 0}, {0, 1}, {1, 0}});
  REQUIRE(tri.size() == 3);
  CHECK(signed_area(tri) > 0);

  const auto square = convex_hull({{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}, {0.5, 0}});
  CHECK(square.size() == 4);
  CHECK(signed_area(square) == doctest::Approx(1.0));

  CHECK(convex_hull({{2, 3}}).size() == 1);
  CHECK(convex_hull({{2, 3}, {4, 5}}).size() == 2);
  CHECK(convex_hull({{0, 0}, {1, 1}, {2, 2}, {3, 3}}).size() == 2);

  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 200; ++i) pts.emplace_back(rng.uniform() * 10, rng.uniform() * 10);
    if (trial % 2) {
      // snap to a lattice to force duplicates and collinear runs
      for (auto& p : pts) p = p.array().round();
    }
    const auto hull = convex_hull(pts);
    std::set<std::pair<double, double>> got;
    for (const auto& p : hull) got.insert({p.x(), p.y()});
    CHECK(got.size() == hull.size());
    CHECK(got == brute_hull(pts));
    CHECK(signed_area(hull) > 0);
  }
}

TEST_CASE("PGS tour order and projection") {
  PlanningGrid g;
  g.traversable = Grid<std::uint8_t>(100, 100, 0.05, Eigen::Vector2d::Zero(), 1);
  const Grid<double> field = dijkstra(g, {50, 50});

  const auto single = pgs_tour({{1.0, 1.0}}, g, field, Pose2(0, 0, 0));
  REQUIRE(single.waypoints.size() == 2);
  CHECK(single.waypoints[0] == single.waypoints[1]);

  const std::vector<Eigen::Vector2d> square{{1.025, 1.025}, {4.025, 1.025}, {4.025, 4.025}, {1.025, 4.025}};
  const auto tour = pgs_tour(square, g, field, Pose2(4.1, 4.1, 0));
  REQUIRE(tour.waypoints.size() == 8);
  CHECK((tour.waypoints[0] - square[2]).norm() < 1e-9);
  CHECK((tour.waypoints[1] - square[3]).norm() < 1e-9);
  CHECK((tour.waypoints[4] - square[2]).norm() < 1e-9);
  CHECK((tour.waypoints[5] - square[1]).norm() < 1e-9);
  CHECK(tour.skipped == 0);

  // a vertex inside a wall is projected onto the nearest reachable cell
  PlanningGrid walled = g;
  for (int y = 0; y < 100; ++y)
    for (int x = 60; x < 70; ++x) walled.traversable.at(x, y) = 0;
  const Grid<double> wf = dijkstra(walled, {50, 50});
  const Eigen::Vector2d inside(3.27, 2.0);
  const auto projected = pgs_tour({inside}, walled, wf, Pose2(0, 0, 0));
  double best = kInf;
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x)
      if (walled.ok(x, y) && wf.at(x, y) < kInf) best = std::min(best, (walled.traversable.center(x, y) - inside).norm());
  CHECK((projected.waypoints[0] - inside).norm() == best);
  CHECK(best <= 1.0);

  // far behind the wall: skipped, and a tour of only such vertices fails
  const auto partial = pgs_tour({{4.5, 2.0}, {1.0, 1.0}}, walled, wf, Pose2(0, 0, 0));
  CHECK(partial.skipped == 1);
  CHECK(partial.waypoints.size() == 2);
  CHECK_THROWS_AS(pgs_tour({{4.5, 2.0}}, walled, wf, Pose2(0, 0, 0)), PlanningError);
}

namespace {

// Runs the explorer on a fixed map, teleporting the robot to the end of each path.
struct TeleportRun {
  std::vector<Action> actions;
  ExplorationPhase final_phase{};
};

TeleportRun teleport(Explorer& ex, PoseGraph& g, const OccupancyMap& map, Pose2 robot, int budget) {
  TeleportRun run;
  const PlanningGrid grid = make_planning_grid(map, 0.22);
  for (int cycle = 0; cycle < budget; ++cycle) {
    const PlanningContext ctx{g, map, grid, robot, g.latest()};
    Action a = ex.planning_cycle(ctx);
    run.actions.push_back(a);
    if (a.kind == Action::Kind::finish || a.kind == Action::Kind::fail) break;
    if (a.kind != Action::Kind::navigate) continue;
    const Eigen::Vector2d end = a.path.back();
    robot = Pose2(end.x(), end.y(), robot.theta);
  }
  run.final_phase = ex.state().phase;
  return run;
}

}  // namespace

TEST_CASE("explorer precedence and terminal branches") {
  // 6 m x 6 m known room; no frontiers anywhere
  const OccupancyMap room = box_map(120, 120);

  SUBCASE("uncertain loop takes precedence over frontiers") {
    OccupancyMap open = room;
    for (int y = 1; y < 119; ++y) open.at(119, y) = CellState::unknown;  // an open side
    PoseGraph g = chain({{1, 1}, {1.5, 1}, {2, 1}, {2.5, 1}, {3, 1}, {3.5, 1}, {4, 1}, {4, 1.5}, {4, 2}, {4, 2.5},
                         {4, 3}, {3.5, 3}, {3, 3}, {2.5, 3}, {2, 3}, {1.5, 3}, {1.5, 2.2}},
                        0.08);
    Explorer ex(ExplorerParams{}, Eigen::Vector2d(2.5, 2.5));
    const PlanningGrid grid = make_planning_grid(open, 0.22);
    const PlanningContext ctx{g, open, grid, g.keyframe(g.latest()).pose, g.latest()};
    const Action a = ex.planning_cycle(ctx);
    REQUIRE(a.kind == Action::Kind::navigate);
    CHECK(a.planner == PlannerKind::alc);
    CHECK(!a.delta_u.empty());
  }

  SUBCASE("explored room: refinement, completion, one global stabilization, finish") {
    PoseGraph g = chain({{1, 1}, {5, 1}, {5, 5}, {1, 5}, {3, 3}}, 0.001);
    Explorer ex(ExplorerParams{}, Eigen::Vector2d(3, 3));
    const TeleportRun run = teleport(ex, g, room, Pose2(3, 3, 0), 200);
    CHECK(run.final_phase == ExplorationPhase::done);
    int global = 0, completed = 0;
    for (const auto& a : run.actions) {
      global += a.kind == Action::Kind::start_global_stabilization;
      completed += a.kind == Action::Kind::mark_region_complete;
      if (a.kind == Action::Kind::navigate) CHECK(a.planner != PlannerKind::frontier);
    }
    CHECK(global == 1);
    CHECK(completed == 1);
    CHECK(ex.state().completed_regions() == std::set<RegionId>{1});
    CHECK(run.actions.back().kind == Action::Kind::finish);
  }

  SUBCASE("frontier targets stay inside the active region") {
    OccupancyMap partial(200, 200, 0.05, Eigen::Vector2d::Zero(), CellState::unknown);
    for (int y = 40; y < 160; ++y)
      for (int x = 40; x < 160; ++x) partial.at(x, y) = CellState::free;
    PoseGraph g = chain({{3, 5}}, 0.01);
    Explorer ex(ExplorerParams{}, Eigen::Vector2d(3, 5));
    const PlanningGrid grid = make_planning_grid(partial, 0.22);
    const PlanningContext ctx{g, partial, grid, Pose2(3, 5, 0), 0};
    const Action a = ex.planning_cycle(ctx);
    REQUIRE(a.kind == Action::Kind::navigate);
    CHECK(a.planner == PlannerKind::frontier);
    REQUIRE(ex.state().previous_frontier.has_value());
    CHECK(ex.state().regions[0].rect.contains(ex.state().previous_frontier->centroid));
  }
}

TEST_CASE("explorer frontier choice matches exhaustive evaluation and is scale invariant") {
  Rng rng(41);
  for (int trial = 0; trial < 15; ++trial) {
    OccupancyMap m(120, 120, 0.05, Eigen::Vector2d::Zero(), CellState::unknown);
    for (int y = 20; y < 100; ++y)
      for (int x = 20; x < 100; ++x) m.at(x, y) = CellState::free;
    for (int k = 0; k < 6; ++k) {
      const int cx = 25 + int(rng.uniform() * 70), cy = 25 + int(rng.uniform() * 70);
      for (int y = cy - 3; y <= cy + 3; ++y)
        for (int x = cx - 3; x <= cx + 3; ++x) m.at(x, y) = CellState::unknown;
    }
    const Pose2 robot(1.0 + rng.uniform() * 4.0, 3.0, rng.uniform() * 6.0 - 3.0);
    const PlanningGrid grid = make_planning_grid(m, 0.22);
    if (!grid.ok(grid.traversable.cell_of(robot.translation()).x, grid.traversable.cell_of(robot.translation()).y))
      continue;
    PoseGraph g = chain({robot.translation()}, 0.01);

    // exhaustive: A* length to each projected centroid
    const Grid<double> field = dijkstra(grid, grid.traversable.cell_of(robot.translation()));
    const FrontierWeights w;
    double best = kInf;
    Eigen::Vector2d best_goal = Eigen::Vector2d::Zero();
    std::vector<Frontier> pieces;
    for (const auto& comp : detect_frontiers(m))
      if (comp.size() >= 5)
        for (const auto& piece : split_frontier(comp, m, 1.0)) pieces.push_back(piece);
    for (const auto& f : pieces) {
      const auto goal = nearest_reachable_cell(grid, &field, f.centroid, 1.0);
      if (!goal) continue;
      const auto path = plan_path(grid, robot.translation(), grid.traversable.center(*goal));
      const double c = frontier_cost(f, robot, path_length(path), std::nullopt, w);
      if (c < best) {
        best = c;
        best_goal = grid.traversable.center(*goal);
      }
    }
    if (best == kInf) continue;

    for (double scale : {1.0, 2.0, 4.0}) {  // powers of two keep every float operation exact
      ExplorerParams params;
      params.use_regions = false;
      params.weights = {w.heading * scale, w.sw * scale, w.size * scale};
      params.projection_radius = scale;
      params.frontier_segment = scale;
      params.goal_tolerance = -1;  // never abandon a reached frontier; the oracle has no such rule
      Explorer ex(params, robot.translation());
      if (scale != 1.0) {
        // scale C_L with the weights by scaling the map resolution
        OccupancyMap big = m;
        big.resolution *= scale;
        const PlanningGrid big_grid = make_planning_grid(big, 0.22 * scale);
        PoseGraph big_g = chain({robot.translation() * scale}, 0.01);
        const Pose2 big_robot(robot.x * scale, robot.y * scale, robot.theta);
        const Action a = ex.planning_cycle({big_g, big, big_grid, big_robot, 0});
        REQUIRE(a.kind == Action::Kind::navigate);
        CHECK((a.target / scale - best_goal).norm() < 1e-9);
      } else {
        const Action a = ex.planning_cycle({g, m, grid, robot, 0});
        REQUIRE(a.kind == Action::Kind::navigate);
        CHECK((a.target - best_goal).norm() < 1e-9);
      }
    }
  }
}
