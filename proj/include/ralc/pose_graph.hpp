#pragma once

#include <ralc/se2.hpp>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ralc {

using VertexId = std::int64_t;
using FactorId = std::int64_t;
using RegionId = std::int32_t;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the normal equations cannot be factorized.
class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

struct Keyframe {
  VertexId id{0};
  Pose2 pose;
  std::optional<RegionId> region_id;
  double feature_score{1.0};
  bool is_anchor{false};

  bool operator==(const Keyframe&) const = default;
};

enum class FactorKind : std::uint8_t { odometry = 0, loop_closure = 1, recovered = 2 };

const char* to_string(FactorKind kind);

struct Factor {
  FactorId id{0};
  VertexId from{0};
  VertexId to{0};
  Pose2 measurement;
  InfoMatrix3 information = InfoMatrix3::Identity();
  FactorKind kind{FactorKind::odometry};

  bool operator==(const Factor&) const = default;
};

/// Dense factor over the relative poses of a vertex set, expressed with respect to vertices[0].
/// Residual block i (i >= 1) is vec(between(z_i, between(x_0, x_i))) with z_i taken at the
/// linearization point, so the factor is invariant to global rigid motions.
struct CliqueFactor {
  FactorId id{0};
  std::vector<VertexId> vertices;
  std::vector<Pose2> relative;  // z_i for i = 1..m-1
  Eigen::MatrixXd information;  // 3(m-1) x 3(m-1)

  bool operator==(const CliqueFactor& other) const;
};

struct OdometryLink {
  VertexId prev{0};
  Pose2 measurement;
  InfoMatrix3 information = InfoMatrix3::Identity();
};

/// Information of the strong prior that fixes the gauge on the first keyframe.
inline constexpr double kGaugePriorInformation = 1e8;

/// Keyframe pose graph. Vertex ids increase monotonically and are never reused.
class PoseGraph {
 public:
  VertexId add_keyframe(const Pose2& pose, const std::optional<OdometryLink>& odometry,
                        std::optional<RegionId> region_id = std::nullopt, double feature_score = 1.0,
                        FactorKind link_kind = FactorKind::odometry);

  FactorId add_loop_closure(VertexId a, VertexId b, const Pose2& measurement,
                            const InfoMatrix3& information);

  /// Inserts a binary factor of any kind (used by marginalization for recovered factors).
  FactorId add_factor(VertexId a, VertexId b, const Pose2& measurement,
                      const InfoMatrix3& information, FactorKind kind);

  FactorId add_clique_factor(std::vector<VertexId> vertices, std::vector<Pose2> relative,
                             Eigen::MatrixXd information);

  /// Removes the keyframes and every factor touching them.
  void remove_keyframes(const std::set<VertexId>& ids);

  bool contains(VertexId id) const { return keyframes_.count(id) != 0; }
  const Keyframe& keyframe(VertexId id) const;
  Keyframe& keyframe(VertexId id);
  const std::map<VertexId, Keyframe>& keyframes() const { return keyframes_; }
  const std::vector<Factor>& factors() const { return factors_; }
  const std::vector<CliqueFactor>& clique_factors() const { return cliques_; }
  std::size_t size() const { return keyframes_.size(); }
  bool empty() const { return keyframes_.empty(); }

  VertexId latest() const;
  /// Vertex carrying the gauge prior.
  VertexId root() const;
  const Pose2& gauge_pose() const { return gauge_pose_; }

  /// Vertices sharing a binary or clique factor with id.
  std::set<VertexId> neighbors(VertexId id) const;
  bool is_connected() const;

  /// Sum of squared Mahalanobis residuals including the gauge prior.
  double cost() const;

  /// Plain-text pose-graph exchange dump (VERTEX_SE2 / EDGE_SE2 lines, 9 significant digits).
  std::string to_g2o() const;

  bool operator==(const PoseGraph&) const = default;

  // Raw state access for serialization.
  struct State {
    std::map<VertexId, Keyframe> keyframes;
    std::vector<Factor> factors;
    std::vector<CliqueFactor> cliques;
    VertexId next_vertex{0};
    FactorId next_factor{0};
    VertexId latest{-1};
    VertexId root{-1};
    Pose2 gauge_pose;
  };
  State state() const;
  static PoseGraph from_state(State s);

 private:
  void require(VertexId id) const;

  std::map<VertexId, Keyframe> keyframes_;
  std::vector<Factor> factors_;
  std::vector<CliqueFactor> cliques_;
  VertexId next_vertex_{0};
  FactorId next_factor_{0};
  VertexId latest_{-1};
  VertexId root_{-1};
  Pose2 gauge_pose_;
};

/// Normal equations of the graph linearized at its current poses (right perturbations).
struct LinearSystem {
  std::vector<VertexId> order;                    // column block k belongs to order[k]
  std::unordered_map<VertexId, int> index;        // vertex -> block index
  Eigen::SparseMatrix<double> hessian;            // J^T Omega J, including the gauge prior
  Eigen::VectorXd gradient;                       // J^T Omega r
  double cost{0};
};

LinearSystem linearize(const PoseGraph& graph);

enum class LinearSolver { sparse_cholesky, dense_cholesky };

struct OptimizeOptions {
  int max_iterations{20};
  double convergence_delta{1e-6};
  LinearSolver solver{LinearSolver::sparse_cholesky};
};

struct OptimizeReport {
  int iterations{0};
  double initial_cost{0};
  double final_cost{0};
  double wall_time_ms{0};
  bool converged{false};
};

/// Gauss-Newton with Cholesky factorization of the normal equations.
OptimizeReport optimize(PoseGraph& graph, const OptimizeOptions& options = {});

/// Marginal covariances recovered from one factorization of the gauge-fixed information matrix.
/// Columns of the inverse are cached per vertex, so repeated queries against the same vertex
/// (the robot) cost one triangular solve pair per new vertex.
class CovarianceRecovery {
 public:
  explicit CovarianceRecovery(const PoseGraph& graph);
  ~CovarianceRecovery();
  CovarianceRecovery(CovarianceRecovery&&) noexcept;
  CovarianceRecovery& operator=(CovarianceRecovery&&) noexcept;

  /// Joint 6x6 covariance over (pose_a, pose_b).
  Eigen::Matrix<double, 6, 6> joint(VertexId a, VertexId b);
  /// 3x3 covariance of between(a, b), propagated through its Jacobian.
  Eigen::Matrix3d relative(VertexId a, VertexId b);

 private:
  const Eigen::MatrixXd& columns(VertexId v);

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Eigen::Matrix<double, 6, 6> marginal_covariance(const PoseGraph& graph, VertexId a, VertexId b);

/// Default information of a hypothetical closure: sigma = (5 cm, 5 cm, 0.025 rad).
InfoMatrix3 default_closure_information();

/// det(sigma_minus) / det(sigma_plus) with sigma_plus = (sigma_minus^-1 + closure)^-1.
double uncertainty_reduction(const Eigen::Matrix3d& sigma_minus, const InfoMatrix3& closure_information);

double uncertainty_reduction(const PoseGraph& graph, VertexId robot, VertexId target,
                             const InfoMatrix3& closure_information);

}  // namespace ralc
