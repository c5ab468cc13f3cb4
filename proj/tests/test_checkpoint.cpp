#include <doctest.h>

#include "oracles.hpp"

#include <ralc/checkpoint.hpp>
#include <ralc/marginalization.hpp>
#include <ralc/random.hpp>

#include <filesystem>
#include <fstream>
#include <random>

using namespace ralc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("ralc_ckpt_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

MapSnapshot sample_snapshot(std::uint64_t seed, RegionId region) {
  std::mt19937_64 rng(seed);
  Rng noise(seed);
  MapSnapshot s;
  s.created_after_region = region;
  s.config_hash = 0xC0FFEE00ULL + seed;
  s.rng_state = noise();

  s.graph = oracle::random_graph(rng, 24);
  for (auto& [id, kf] : s.graph.keyframes()) {
    Keyframe& k = s.graph.keyframe(id);
    k.region_id = id < 12 ? std::optional<RegionId>(1) : std::nullopt;
    k.feature_score = noise.uniform();
    s.true_poses[id] = Pose2(kf.pose.x + 0.01, kf.pose.y, kf.pose.theta);
  }
  if (s.graph.size() > 6) marginalize_region(s.graph, 1);  // produces recovered factors and anchor flags
  const auto ids = s.graph.keyframes();
  if (ids.size() >= 3) {
    auto it = ids.begin();
    const VertexId a = it->first, b = (++it)->first, c = (++it)->first;
    s.graph.add_clique_factor({a, b, c}, {Pose2(0.1, 0.2, 0.3), Pose2(-0.5, 0.25, -3.1)},
                              Eigen::MatrixXd::Identity(6, 6) * 3.5);
  }

  for (int i = 0; i < 3; ++i) {
    Submap sm;
    sm.id = i;
    sm.keyframe = s.graph.latest();
    sm.created_by = i;
    sm.frame = Pose2(i * 0.5, -1.0, 0.0);
    sm.grid = OccupancyMap(20 + i, 10, 0.05, Eigen::Vector2d::Zero());
    for (auto& c : sm.grid.cells) c = static_cast<CellState>(noise() % 3);
    sm.min_x = 1;
    sm.max_x = 5;
    sm.min_y = 2;
    sm.max_y = 8;
    s.submaps.push_back(sm);
  }
  s.map = OccupancyMap(33, 17, 0.05, Eigen::Vector2d(-1.25, 0.4));
  for (auto& c : s.map.cells) c = static_cast<CellState>(noise() % 3);

  Region r1 = make_region(1, {1, 2}, RegionLimits{});
  r1.phase = RegionPhase::completed;
  s.exploration.regions = {r1, make_region(2, {5, 2}, RegionLimits{})};
  s.exploration.active_region = 2;
  Frontier f;
  f.cells = {{1, 2}, {2, 2}};
  f.centroid = {0.075, 0.125};
  s.exploration.previous_frontier = f;
  s.exploration.tour = {{1, 1}, {2, 3.5}};
  s.exploration.tour_index = 1;
  s.exploration.blacklist = {{4, 4}};
  s.exploration.attempted_alc = {3, 7};
  s.exploration.alc_commitment = 9;
  s.exploration.last_goal = {0.3, 0.7};
  s.exploration.stalled_cycles = 2;
  return s;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("snapshot round trip is exact") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const MapSnapshot s = sample_snapshot(seed, 1);
    const std::string bytes = serialize(s);
    CHECK(bytes.compare(0, 8, "RALCSNAP") == 0);
    const MapSnapshot back = deserialize(bytes);
    CHECK(back == s);
    CHECK(serialize(back) == bytes);
  }
}

TEST_CASE("corrupt snapshots are rejected") {
  const std::string bytes = serialize(sample_snapshot(3, 1));
  CHECK_THROWS_AS(deserialize(bytes.substr(0, bytes.size() - 1)), SnapshotError);
  CHECK_THROWS_AS(deserialize(bytes + "x"), SnapshotError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize(bad_magic), SnapshotError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(deserialize(bad_version), SnapshotError);
  CHECK_THROWS_AS(deserialize(""), SnapshotError);
}

TEST_CASE("save, list and restore") {
  TempDir dir("save");
  CHECK_THROWS_AS(restore_latest(dir.str(), 0), ColdStart);

  const MapSnapshot first = sample_snapshot(5, 1);
  save_snapshot(first, dir.str());
  CHECK(list_snapshots(dir.str()).size() == 1);

  // region ids sort numerically, not lexically
  for (RegionId r : {2, 10}) {
    MapSnapshot s = sample_snapshot(5, r);
    save_snapshot(s, dir.str());
  }
  const auto all = list_snapshots(dir.str());
  REQUIRE(all.size() == 3);
  CHECK(all.back() == snapshot_path(dir.str(), 10));

  const MapSnapshot latest = restore_latest(dir.str(), first.config_hash);
  CHECK(latest.created_after_region == 10);
  CHECK(latest.graph == first.graph);
  CHECK(serialize(latest) == read_bytes(snapshot_path(dir.str(), 10)));
  CHECK(latest.exploration.completed_regions() == first.exploration.completed_regions());

  CHECK_THROWS_AS(restore_latest(dir.str(), first.config_hash + 1), SnapshotError);

  for (const auto& entry : fs::directory_iterator(dir.path))
    CHECK(entry.path().extension() == ".ralc");  // no temp files left behind
}

TEST_CASE("failed saves leave prior snapshots intact") {
  TempDir dir("fail");
  const MapSnapshot s = sample_snapshot(8, 1);
  save_snapshot(s, dir.str());
  const std::string before = read_bytes(snapshot_path(dir.str(), 1));

  // a directory squatting on the temp path makes the write fail
  MapSnapshot next = sample_snapshot(9, 1);
  fs::create_directories(snapshot_path(dir.str(), 1) + ".tmp");
  CHECK_THROWS_AS(save_snapshot(next, dir.str()), SnapshotError);
  CHECK(read_bytes(snapshot_path(dir.str(), 1)) == before);

  // garbage with the right name is ignored when choosing the latest
  write_bytes(dir.path / "snapshot_99.ralc", "not a snapshot");
  CHECK(restore_latest(dir.str(), s.config_hash).created_after_region == 1);
}
