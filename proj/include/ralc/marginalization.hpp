#pragma once

#include <ralc/pose_graph.hpp>

#include <Eigen/Core>

#include <map>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace ralc {

class RecoveryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Target distribution over the Markov blanket of a removed vertex set.
struct EliminationClique {
  std::set<VertexId> removed;
  std::vector<VertexId> kept;             // block order of target_information
  Eigen::MatrixXd target_information;     // 3|kept| x 3|kept|
  std::map<VertexId, Pose2> linearization;  // poses of kept vertices
};

struct RecoveredTopology {
  std::vector<std::pair<VertexId, VertexId>> edges;
};

enum class TopologyKind { chow_liu_tree, complete };

struct MarginalizationOptions {
  int anchors_per_region{3};
  double anchor_distance_weight{0.5};  // per meter
  TopologyKind topology{TopologyKind::chow_liu_tree};
};

struct MarginalizationReport {
  RegionId region_id{0};
  int removed_count{0};
  int recovered_factor_count{0};
  double kld{0};
  int dense_fallbacks{0};
  std::vector<VertexId> removed;
  std::vector<VertexId> anchors;
};

/// A - B D^-1 B^T for info = [[A, B], [B^T, D]] with A of size kept_dim.
Eigen::MatrixXd schur_complement(const Eigen::MatrixXd& info, Eigen::Index kept_dim);

/// Greedy anchor choice: score = feature_score + weight * (distance to nearest chosen anchor).
/// Vertices in `forced` are chosen first. Marks the result as anchors in the graph.
std::set<VertexId> select_anchors(PoseGraph& graph, RegionId region, int count, double distance_weight,
                                  const std::set<VertexId>& forced = {});

/// Information over the blanket of `removed` after eliminating it from every factor touching it.
EliminationClique schur_marginalize(const PoseGraph& graph, const std::set<VertexId>& removed);

RecoveredTopology complete_topology(const EliminationClique& clique);
/// Maximum mutual-information spanning tree over the kept vertices.
RecoveredTopology chow_liu_topology(const EliminationClique& clique);

/// Relative-pose factors on the topology minimizing D_KL(P || Q) to the clique target.
std::vector<Factor> recover_factors(const EliminationClique& clique, const RecoveredTopology& topology);

/// Single dense factor reproducing the target exactly.
CliqueFactor dense_clique_factor(const EliminationClique& clique);

/// Information over the kept vertices implied by relative-pose factors linearized at the clique poses.
Eigen::MatrixXd implied_information(const EliminationClique& clique, const std::vector<Factor>& factors);

/// D_KL(P || Q) between zero-mean Gaussians restricted to the non-gauge subspace of the clique.
double kl_divergence(const EliminationClique& clique, const Eigen::MatrixXd& approx_information);

/// Removes the non-anchor keyframes of a region and inserts recovered factors in their place.
MarginalizationReport marginalize_region(PoseGraph& graph, RegionId region,
                                         const MarginalizationOptions& options = {});

}  // namespace ralc
