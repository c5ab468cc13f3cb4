#pragma once

#include <ralc/exploration.hpp>
#include <ralc/grid.hpp>
#include <ralc/pose_graph.hpp>
#include <ralc/world.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ralc {

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown by restore_latest when the run directory holds no snapshot.
class ColdStart : public SnapshotError {
 public:
  ColdStart() : SnapshotError("cold start: no snapshot available") {}
};

inline constexpr std::uint32_t kSnapshotVersion = 1;

struct MapSnapshot {
  std::uint32_t version{kSnapshotVersion};
  RegionId created_after_region{0};
  std::uint64_t config_hash{0};
  std::uint64_t rng_state{0};
  ExplorationState exploration;
  PoseGraph graph;
  std::vector<Submap> submaps;
  OccupancyMap map;
  std::map<VertexId, Pose2> true_poses;  // simulator ground truth of the stored keyframes

  bool operator==(const MapSnapshot&) const = default;
};

/// "RALCSNAP", then little-endian fields. Floating-point values are stored as their IEEE-754 bits.
std::string serialize(const MapSnapshot& snapshot);
MapSnapshot deserialize(const std::string& bytes);

std::string snapshot_path(const std::string& dir, RegionId region);

/// Writes through a temporary file and a rename, so an existing snapshot is never left half-written.
std::string save_snapshot(const MapSnapshot& snapshot, const std::string& dir);

/// Every readable snapshot in `dir`, ordered by created_after_region.
std::vector<std::string> list_snapshots(const std::string& dir);

/// Loads the snapshot with the highest created_after_region.
/// Throws ColdStart when there is none and SnapshotError when its config hash differs.
MapSnapshot restore_latest(const std::string& dir, std::uint64_t config_hash);

}  // namespace ralc
