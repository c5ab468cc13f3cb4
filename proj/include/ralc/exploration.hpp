#pragma once

#include <ralc/grid.hpp>
#include <ralc/pose_graph.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace ralc {

class PlanningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Regions

struct Rect {
  double x_min{0}, y_min{0}, x_max{0}, y_max{0};

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  Eigen::Vector2d center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
  bool contains(const Eigen::Vector2d& p) const {
    return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
  }
  bool operator==(const Rect&) const = default;
};

struct RegionLimits {
  double w_min{4.0}, h_min{4.0};
  double w_max{8.0}, h_max{8.0};
};

enum class RegionPhase : std::uint8_t { discovering = 0, refining = 1, completed = 2 };

const char* to_string(RegionPhase phase);

struct Region {
  RegionId id{0};
  Rect rect;
  RegionPhase phase{RegionPhase::discovering};

  bool operator==(const Region&) const = default;
};

/// A minimum-size region centered at `center`.
Region make_region(RegionId id, const Eigen::Vector2d& center, const RegionLimits& limits);

/// Expands the rect minimally to cover the disk of radius `r` around `robot_xy`, without exceeding the max size.
/// Throws PlanningError unless the region is discovering.
Region grow_region(const Region& region, const Eigen::Vector2d& robot_xy, double r, const RegionLimits& limits);

// ---------------------------------------------------------------------------
// Frontiers

struct Frontier {
  std::vector<CellIndex> cells;  // scan order
  Eigen::Vector2d centroid{Eigen::Vector2d::Zero()};

  int size() const { return static_cast<int>(cells.size()); }
  bool operator==(const Frontier&) const = default;
};

/// Unknown cells 4-adjacent to free space, grouped into 8-connected components in scan order of their first cell.
/// With `region`, components whose centroid falls outside it are dropped.
std::vector<Frontier> detect_frontiers(const OccupancyMap& map, const std::optional<Rect>& region = std::nullopt);

/// Splits a component into pieces falling in the same `tile`-sized world-aligned square, in tile scan order.
/// Keeps targets near their cells when a component wraps around explored space.
std::vector<Frontier> split_frontier(const Frontier& frontier, const OccupancyMap& map, double tile);

/// Two frontiers are the same target if they share a cell or their centroids are within `tolerance`.
bool same_frontier(const Frontier& a, const Frontier& b, double tolerance = 0.5);

struct FrontierWeights {
  double heading{0.5};  // beta_1, m/rad
  double sw{1.0};       // beta_3, m
  double size{0.02};    // beta_4, m/cell
};

/// C_L + b1 * C_A + b3 * C_S - b4 * size for a given path length C_L.
double frontier_cost(const Frontier& frontier, const Pose2& robot, double path_length,
                     const std::optional<Frontier>& previous, const FrontierWeights& weights);

// ---------------------------------------------------------------------------
// Planning grid

/// Traversable cells are free and at least `inflation` from every occupied cell center.
struct PlanningGrid {
  Grid<std::uint8_t> traversable;
  double inflation{0};

  bool ok(int x, int y) const { return traversable.in_bounds(x, y) && traversable.at(x, y) != 0; }
};

PlanningGrid make_planning_grid(const OccupancyMap& map, double inflation);

/// Path-length field (meters) over the 8-connected traversable graph; +inf where unreachable.
/// Diagonal steps need both orthogonal neighbors traversable.
Grid<double> dijkstra(const PlanningGrid& grid, CellIndex start);

/// A* between cell centers. Throws PlanningError("no path") when disconnected, and when an endpoint is blocked.
std::vector<Eigen::Vector2d> plan_path(const PlanningGrid& grid, const Eigen::Vector2d& from, const Eigen::Vector2d& to);

/// Builds the inflated grid from `map` first.
std::vector<Eigen::Vector2d> plan_path(const OccupancyMap& map, const Eigen::Vector2d& from, const Eigen::Vector2d& to,
                                       double robot_radius);

double path_length(const std::vector<Eigen::Vector2d>& path);

/// Nearest cell (by Euclidean distance from `p`) within `radius` that is traversable and, given a field, reachable.
/// Ties go to the lower path cost, then to scan order.
std::optional<CellIndex> nearest_reachable_cell(const PlanningGrid& grid, const Grid<double>* field,
                                                const Eigen::Vector2d& p, double radius);

// ---------------------------------------------------------------------------
// Active loop closure

struct AlcCandidate {
  std::vector<VertexId> keyframe_ids;
  Pose2 centroid_pose;
  VertexId representative{0};
};

struct AlcParams {
  double cluster_radius{1.0};
  double min_feature_score{0.3};
  double threshold{2.0};
  double distance_weight{0.05};
};

/// Greedy clustering of the region's keyframes in id order; `region` nullopt takes every keyframe.
std::vector<AlcCandidate> build_alc_candidates(const PoseGraph& graph, std::optional<RegionId> region,
                                               const AlcParams& params = {});

struct AlcSelection {
  AlcCandidate target;
  double delta_u{0};
  double score{0};
  double path_length{0};
};

/// Path length to a candidate's representative, or nullopt when unreachable.
using PathLengthFn = std::function<std::optional<double>(const AlcCandidate&)>;

/// Maximizes delta_u - distance_weight * path length; returns the winner only if its delta_u exceeds the threshold.
/// `scored` receives every evaluated delta_u in candidate order.
std::optional<AlcSelection> select_alc_target(const PoseGraph& graph, VertexId robot,
                                              const std::vector<AlcCandidate>& candidates, const AlcParams& params,
                                              const PathLengthFn& path_length,
                                              const InfoMatrix3& closure_information,
                                              std::vector<double>* scored = nullptr);

// ---------------------------------------------------------------------------
// Pose-graph stabilization

/// QuickHull. Counter-clockwise, starting from the lowest-x (then lowest-y) point; collinear points dropped.
std::vector<Eigen::Vector2d> convex_hull(const std::vector<Eigen::Vector2d>& points);

struct Tour {
  std::vector<Eigen::Vector2d> waypoints;
  int skipped{0};
};

/// Hull vertices projected into reachable free space, visited CCW from the one nearest the robot, then CW.
/// Throws PlanningError when no vertex is reachable.
Tour pgs_tour(const std::vector<Eigen::Vector2d>& hull, const PlanningGrid& grid, const Grid<double>& field,
              const Pose2& robot, double projection_radius = 1.0);

// ---------------------------------------------------------------------------
// Exploration state machine

enum class ExplorationPhase : std::uint8_t {
  region_discovery = 0,
  region_refinement = 1,
  global_stabilization = 2,
  done = 3,
  failed = 4,
};

const char* to_string(ExplorationPhase phase);

enum class PlannerKind : std::uint8_t { none = 0, frontier = 1, alc = 2, pgs = 3, global = 4 };

const char* to_string(PlannerKind kind);

struct ExplorationState {
  std::vector<Region> regions;
  std::optional<RegionId> active_region;
  std::optional<Frontier> previous_frontier;
  ExplorationPhase phase{ExplorationPhase::region_discovery};

  // tour being executed in refinement or stabilization
  std::vector<Eigen::Vector2d> tour;
  std::uint32_t tour_index{0};
  bool awaiting_new_region{false};

  // targets given up on
  std::vector<Eigen::Vector2d> blacklist;
  std::set<VertexId> attempted_alc;
  std::optional<VertexId> alc_commitment;  // loop-closure target held until arrival or stall

  // progress watchdog for the current target
  Eigen::Vector2d last_goal{Eigen::Vector2d::Zero()};
  Eigen::Vector2d last_position{Eigen::Vector2d::Zero()};
  std::uint32_t stalled_cycles{0};

  Region* find_region(RegionId id);
  const Region* find_region(RegionId id) const;
  std::set<RegionId> completed_regions() const;
  RegionId next_region_id() const;

  bool operator==(const ExplorationState&) const = default;
};

struct ExplorerParams {
  RegionLimits limits;
  double grow_radius{2.0};
  FrontierWeights weights;
  AlcParams alc;
  InfoMatrix3 closure_information{default_closure_information()};
  int min_frontier_size{5};
  double frontier_segment{1.0};
  double goal_tolerance{0.25};
  double projection_radius{1.0};
  double blacklist_radius{0.3};
  int stall_limit{8};
  bool use_regions{true};  // false: frontier and ALC over the whole map, no refinement or stabilization
};

struct PlanningContext {
  const PoseGraph& graph;
  const OccupancyMap& map;
  const PlanningGrid& grid;
  Pose2 robot;
  VertexId robot_keyframe{0};
};

struct Action {
  enum class Kind : std::uint8_t { navigate, mark_region_complete, start_global_stabilization, finish, fail };

  Kind kind{Kind::finish};
  PlannerKind planner{PlannerKind::none};
  std::vector<Eigen::Vector2d> path;
  Eigen::Vector2d target{Eigen::Vector2d::Zero()};
  std::optional<VertexId> alc_representative;
  std::vector<double> delta_u;
  RegionId region{0};
  int skipped_waypoints{0};
  std::string reason;
};

const char* to_string(Action::Kind kind);

class Explorer {
 public:
  /// Starts discovery in a first region centered at `start` (or without regions when disabled).
  Explorer(ExplorerParams params, const Eigen::Vector2d& start);
  Explorer(ExplorerParams params, ExplorationState state);

  /// One 1 Hz decision. Never called once the phase is done or failed.
  Action planning_cycle(const PlanningContext& ctx);

  /// Discards the active region and starts discovery in a new one at `center`.
  void restart_at(const Eigen::Vector2d& center);

  const ExplorationState& state() const { return state_; }
  const ExplorerParams& params() const { return params_; }

 private:
  Action discovery(const PlanningContext& ctx, const Grid<double>& field, CellIndex start);
  Action tour_step(const PlanningContext& ctx, const Grid<double>& field, CellIndex start, PlannerKind planner);
  Action after_region(const PlanningContext& ctx, const Grid<double>& field, CellIndex start);
  Action begin_refinement(const PlanningContext& ctx, const Grid<double>& field, CellIndex start);
  Action navigate_to(const PlanningContext& ctx, CellIndex start, CellIndex goal, PlannerKind planner);
  bool blacklisted(const Eigen::Vector2d& p) const;
  bool stalled(const Eigen::Vector2d& position, const Eigen::Vector2d& goal);
  std::vector<Frontier> reachable_frontiers(const PlanningContext& ctx, const Grid<double>& field,
                                            const std::optional<Rect>& rect, std::vector<CellIndex>* goals) const;

  ExplorerParams params_;
  ExplorationState state_;
};

}  // namespace ralc
