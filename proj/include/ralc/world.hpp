#pragma once

#include <ralc/grid.hpp>
#include <ralc/pose_graph.hpp>
#include <ralc/random.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ralc {

class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureZone {
  double x_min, y_min, x_max, y_max;
  double score;
};

/// Ground-truth world. Origin at (0, 0); the first grid line of the file is the top row.
struct Environment {
  std::string name;
  Grid<std::uint8_t> walls;  // 1 = wall
  Grid<float> features;      // visual richness in [0, 1]
  Pose2 dock;
  std::vector<FeatureZone> zones;

  double resolution() const { return walls.resolution; }
  bool is_wall(int x, int y) const { return !walls.in_bounds(x, y) || walls.at(x, y) != 0; }
  bool is_wall(const CellIndex& c) const { return is_wall(c.x, c.y); }
  double feature_at(const Eigen::Vector2d& p) const;
  /// Distance from p to the nearest wall cell boundary, searched up to `limit`.
  double clearance(const Eigen::Vector2d& p, double limit) const;
  /// True iff no wall cell lies on the segment between the cells of a and b (endpoints excluded).
  bool line_of_sight(const Eigen::Vector2d& a, const Eigen::Vector2d& b) const;
  double free_area() const;
};

Environment parse_environment(std::istream& in);
Environment load_environment(const std::string& path);

// ---------------------------------------------------------------------------------------------

struct OdometryNoise {
  double trans_sigma{0.01};  // m per m traveled
  double rot_sigma{0.01};    // rad per rad turned
};

struct SimRobot {
  Pose2 true_pose;
  Pose2 odom_pose;
  double radius{0.17};
  OdometryNoise noise;
};

struct StepResult {
  Pose2 true_pose;
  Pose2 odom_increment;
  bool blocked{false};
};

/// Unicycle integration over dt. A blocked move is retried along each world axis alone.
/// Always consumes three normal draws so the stream does not depend on the motion.
StepResult step_robot(SimRobot& robot, const Environment& env, double v, double omega, double dt, Rng& rng);

/// Information of odometry accumulated over steps with the given sums of squared step lengths and
/// squared step rotations. Variances are floored at 1e-6 so noiseless runs stay finite.
InfoMatrix3 odometry_information(double sum_sq_trans, double sum_sq_rot, const OdometryNoise& noise);

// ---------------------------------------------------------------------------------------------

struct SensorModel {
  double max_range{4.0};
  int beams{720};
};

struct SubmapParams {
  double extent{6.0};  // square side, meters
};

/// Local tri-state grid attached to a keyframe. `frame` places the grid's lower-left corner in the
/// frame of the attached keyframe; after marginalization it is re-expressed relative to a survivor.
struct Submap {
  int id{0};
  VertexId keyframe{0};
  VertexId created_by{0};
  Pose2 frame;
  OccupancyMap grid;  // origin is (0, 0) in the grid frame
  int min_x{0}, min_y{0}, max_x{-1}, max_y{-1};  // bounding box of known cells

  bool operator==(const Submap&) const = default;
};

/// Ray-casts from the true pose into a grid whose frame is fixed relative to the keyframe body.
Submap sense(const SimRobot& robot, const Environment& env, const SensorModel& sensor, const SubmapParams& params,
             int id, VertexId keyframe);

/// Scan in world cells of the environment grid from a world position.
OccupancyMap raycast(const Environment& env, const Eigen::Vector2d& origin, const SensorModel& sensor);

/// Moves a submap from its keyframe (currently at `keyframe_pose`) to `target`, keeping its world placement.
void reattach_submap(Submap& submap, const Pose2& keyframe_pose, VertexId target, const Pose2& target_pose);

/// Empty global map covering the environment with a margin.
OccupancyMap make_global_map(const Environment& env, double margin = 2.0);

/// Paints one submap into `map` at the current pose of its keyframe; max-precedence fusion.
void paint_submap(OccupancyMap& map, const Submap& submap, const Pose2& keyframe_pose);

/// Clears `map` and paints every submap at its keyframe's current pose.
void rebuild_global_map(OccupancyMap& map, const std::vector<Submap>& submaps, const PoseGraph& graph);

// ---------------------------------------------------------------------------------------------

struct LoopClosureModel {
  double max_distance{1.5};
  double min_feature{0.3};
  int min_id_gap{5};
  Eigen::Vector3d sigma{0.05, 0.05, 0.025};
  bool noisy{true};
  InfoMatrix3 information{default_closure_information()};
};

struct LoopClosure {
  VertexId target;
  Pose2 measurement;  // between(target, robot_kf)
  InfoMatrix3 information;
};

/// Nearest eligible keyframe in true distance with line of sight and enough texture.
/// Consumes three normal draws when a closure is returned and none otherwise.
std::optional<LoopClosure> detect_loop_closure(const PoseGraph& graph, VertexId robot_kf, const Environment& env,
                                               const std::map<VertexId, Pose2>& true_poses,
                                               const LoopClosureModel& model, Rng& rng);

}  // namespace ralc
