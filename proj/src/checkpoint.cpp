#include <ralc/checkpoint.hpp>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ralc {

namespace {

constexpr char kMagic[] = "RALCSNAP";
constexpr std::size_t kMagicSize = 8;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void size(std::size_t n) { u64(n); }
  void bytes(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }

  void vec2(const Eigen::Vector2d& v) {
    f64(v.x());
    f64(v.y());
  }
  void pose(const Pose2& p) {
    f64(p.x);
    f64(p.y);
    f64(p.theta);
  }
  void matrix(const Eigen::MatrixXd& m) {
    size(static_cast<std::size_t>(m.rows()));
    size(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
  }
  void grid(const OccupancyMap& g) {
    i32(g.width);
    i32(g.height);
    f64(g.resolution);
    vec2(g.origin);
    size(g.cells.size());
    bytes(g.cells.data(), g.cells.size());
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool flag() {
    const std::uint8_t v = u8();
    if (v > 1) throw SnapshotError("corrupt snapshot: bad flag");
    return v == 1;
  }
  std::size_t size() {
    const std::uint64_t n = u64();
    if (n > in_.size() - pos_) throw SnapshotError("corrupt snapshot: length exceeds file");
    return static_cast<std::size_t>(n);
  }
  void bytes(void* data, std::size_t n) {
    need(n);
    std::copy(in_.data() + pos_, in_.data() + pos_ + n, static_cast<char*>(data));
    pos_ += n;
  }

  Eigen::Vector2d vec2() {
    const double x = f64();
    return {x, f64()};
  }
  Pose2 pose() {
    Pose2 p;  // fields assigned directly: the constructor would renormalize theta
    p.x = f64();
    p.y = f64();
    p.theta = f64();
    return p;
  }
  Eigen::MatrixXd matrix() {
    const std::size_t rows = u64(), cols = u64();
    if (rows * cols * 8 > in_.size() - pos_) throw SnapshotError("corrupt snapshot: matrix exceeds file");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = f64();
    return m;
  }
  OccupancyMap grid() {
    OccupancyMap g;
    g.width = i32();
    g.height = i32();
    g.resolution = f64();
    g.origin = vec2();
    const std::size_t n = size();
    if (g.width < 0 || g.height < 0 || n != static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height))
      throw SnapshotError("corrupt snapshot: grid size mismatch");
    g.cells.resize(n);
    bytes(g.cells.data(), n);
    for (CellState c : g.cells)
      if (static_cast<std::uint8_t>(c) > 2) throw SnapshotError("corrupt snapshot: bad cell state");
    return g;
  }

  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw SnapshotError("corrupt snapshot: truncated");
  }

  const std::string& in_;
  std::size_t pos_{0};
};

template <typename E>
E enum_value(Reader& r, std::uint8_t max) {
  const std::uint8_t v = r.u8();
  if (v > max) throw SnapshotError("corrupt snapshot: bad enum value");
  return static_cast<E>(v);
}

void write_frontier(Writer& w, const Frontier& f) {
  w.size(f.cells.size());
  for (const auto& c : f.cells) {
    w.i32(c.x);
    w.i32(c.y);
  }
  w.vec2(f.centroid);
}

Frontier read_frontier(Reader& r) {
  Frontier f;
  f.cells.resize(r.size());
  for (auto& c : f.cells) {
    c.x = r.i32();
    c.y = r.i32();
  }
  f.centroid = r.vec2();
  return f;
}

void write_state(Writer& w, const ExplorationState& s) {
  w.size(s.regions.size());
  for (const auto& region : s.regions) {
    w.i32(region.id);
    w.f64(region.rect.x_min);
    w.f64(region.rect.y_min);
    w.f64(region.rect.x_max);
    w.f64(region.rect.y_max);
    w.u8(static_cast<std::uint8_t>(region.phase));
  }
  w.u8(s.active_region.has_value());
  if (s.active_region) w.i32(*s.active_region);
  w.u8(s.previous_frontier.has_value());
  if (s.previous_frontier) write_frontier(w, *s.previous_frontier);
  w.u8(static_cast<std::uint8_t>(s.phase));
  w.size(s.tour.size());
  for (const auto& p : s.tour) w.vec2(p);
  w.u32(s.tour_index);
  w.u8(s.awaiting_new_region);
  w.size(s.blacklist.size());
  for (const auto& p : s.blacklist) w.vec2(p);
  w.size(s.attempted_alc.size());
  for (VertexId v : s.attempted_alc) w.i64(v);
  w.u8(s.alc_commitment.has_value());
  if (s.alc_commitment) w.i64(*s.alc_commitment);
  w.vec2(s.last_goal);
  w.vec2(s.last_position);
  w.u32(s.stalled_cycles);
}

ExplorationState read_state(Reader& r) {
  ExplorationState s;
  s.regions.resize(r.size());
  for (auto& region : s.regions) {
    region.id = r.i32();
    region.rect.x_min = r.f64();
    region.rect.y_min = r.f64();
    region.rect.x_max = r.f64();
    region.rect.y_max = r.f64();
    region.phase = enum_value<RegionPhase>(r, 2);
  }
  if (r.flag()) s.active_region = r.i32();
  if (r.flag()) s.previous_frontier = read_frontier(r);
  s.phase = enum_value<ExplorationPhase>(r, 4);
  s.tour.resize(r.size());
  for (auto& p : s.tour) p = r.vec2();
  s.tour_index = r.u32();
  s.awaiting_new_region = r.flag();
  s.blacklist.resize(r.size());
  for (auto& p : s.blacklist) p = r.vec2();
  const std::size_t n_alc = r.size();
  for (std::size_t i = 0; i < n_alc; ++i) s.attempted_alc.insert(r.i64());
  if (r.flag()) s.alc_commitment = r.i64();
  s.last_goal = r.vec2();
  s.last_position = r.vec2();
  s.stalled_cycles = r.u32();
  return s;
}

void write_graph(Writer& w, const PoseGraph& g) {
  const PoseGraph::State s = g.state();
  w.size(s.keyframes.size());
  for (const auto& [id, kf] : s.keyframes) {
    w.i64(kf.id);
    w.pose(kf.pose);
    w.u8(kf.region_id.has_value());
    if (kf.region_id) w.i32(*kf.region_id);
    w.f64(kf.feature_score);
    w.u8(kf.is_anchor);
  }
  w.size(s.factors.size());
  for (const auto& f : s.factors) {
    w.i64(f.id);
    w.i64(f.from);
    w.i64(f.to);
    w.pose(f.measurement);
    w.matrix(f.information);
    w.u8(static_cast<std::uint8_t>(f.kind));
  }
  w.size(s.cliques.size());
  for (const auto& c : s.cliques) {
    w.i64(c.id);
    w.size(c.vertices.size());
    for (VertexId v : c.vertices) w.i64(v);
    w.size(c.relative.size());
    for (const auto& p : c.relative) w.pose(p);
    w.matrix(c.information);
  }
  w.i64(s.next_vertex);
  w.i64(s.next_factor);
  w.i64(s.latest);
  w.i64(s.root);
  w.pose(s.gauge_pose);
}

PoseGraph read_graph(Reader& r) {
  PoseGraph::State s;
  const std::size_t n_kf = r.size();
  for (std::size_t i = 0; i < n_kf; ++i) {
    Keyframe kf;
    kf.id = r.i64();
    kf.pose = r.pose();
    if (r.flag()) kf.region_id = r.i32();
    kf.feature_score = r.f64();
    kf.is_anchor = r.flag();
    s.keyframes.emplace(kf.id, kf);
  }
  s.factors.resize(r.size());
  for (auto& f : s.factors) {
    f.id = r.i64();
    f.from = r.i64();
    f.to = r.i64();
    f.measurement = r.pose();
    const Eigen::MatrixXd info = r.matrix();
    if (info.rows() != 3 || info.cols() != 3) throw SnapshotError("corrupt snapshot: factor information shape");
    f.information = info;
    f.kind = enum_value<FactorKind>(r, 2);
  }
  s.cliques.resize(r.size());
  for (auto& c : s.cliques) {
    c.id = r.i64();
    c.vertices.resize(r.size());
    for (auto& v : c.vertices) v = r.i64();
    c.relative.resize(r.size());
    for (auto& p : c.relative) p = r.pose();
    c.information = r.matrix();
  }
  s.next_vertex = r.i64();
  s.next_factor = r.i64();
  s.latest = r.i64();
  s.root = r.i64();
  s.gauge_pose = r.pose();
  for (const auto& f : s.factors)
    if (!s.keyframes.count(f.from) || !s.keyframes.count(f.to)) throw SnapshotError("corrupt snapshot: dangling factor");
  return PoseGraph::from_state(std::move(s));
}

void write_submap(Writer& w, const Submap& s) {
  w.i32(s.id);
  w.i64(s.keyframe);
  w.i64(s.created_by);
  w.pose(s.frame);
  w.grid(s.grid);
  w.i32(s.min_x);
  w.i32(s.min_y);
  w.i32(s.max_x);
  w.i32(s.max_y);
}

Submap read_submap(Reader& r) {
  Submap s;
  s.id = r.i32();
  s.keyframe = r.i64();
  s.created_by = r.i64();
  s.frame = r.pose();
  s.grid = r.grid();
  s.min_x = r.i32();
  s.min_y = r.i32();
  s.max_x = r.i32();
  s.max_y = r.i32();
  return s;
}

// Reads only the fixed header: version, region, config hash.
std::optional<RegionId> header_region(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char buf[kMagicSize + 8];
  if (!in.read(buf, sizeof buf)) return std::nullopt;
  if (std::string(buf, kMagicSize) != kMagic) return std::nullopt;
  std::string rest(buf + kMagicSize, 8);
  Reader r(rest);
  if (r.u32() != kSnapshotVersion) return std::nullopt;
  return r.i32();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SnapshotError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string serialize(const MapSnapshot& s) {
  Writer w;
  w.bytes(kMagic, kMagicSize);
  w.u32(s.version);
  w.i32(s.created_after_region);
  w.u64(s.config_hash);
  w.u64(s.rng_state);
  write_state(w, s.exploration);
  write_graph(w, s.graph);
  w.size(s.submaps.size());
  for (const auto& sm : s.submaps) write_submap(w, sm);
  w.grid(s.map);
  w.size(s.true_poses.size());
  for (const auto& [id, p] : s.true_poses) {
    w.i64(id);
    w.pose(p);
  }
  return w.take();
}

MapSnapshot deserialize(const std::string& bytes) {
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kMagic) != 0)
    throw SnapshotError("not a snapshot (bad magic)");
  const std::string body = bytes.substr(kMagicSize);
  Reader r(body);
  MapSnapshot s;
  s.version = r.u32();
  if (s.version != kSnapshotVersion) throw SnapshotError("unsupported snapshot version " + std::to_string(s.version));
  s.created_after_region = r.i32();
  s.config_hash = r.u64();
  s.rng_state = r.u64();
  s.exploration = read_state(r);
  s.graph = read_graph(r);
  s.submaps.resize(r.size());
  for (auto& sm : s.submaps) sm = read_submap(r);
  s.map = r.grid();
  const std::size_t n = r.size();
  for (std::size_t i = 0; i < n; ++i) {
    const VertexId id = r.i64();
    s.true_poses[id] = r.pose();
  }
  if (!r.done()) throw SnapshotError("corrupt snapshot: trailing bytes");
  return s;
}

std::string snapshot_path(const std::string& dir, RegionId region) {
  return (std::filesystem::path(dir) / ("snapshot_" + std::to_string(region) + ".ralc")).string();
}

std::string save_snapshot(const MapSnapshot& snapshot, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const std::string path = snapshot_path(dir, snapshot.created_after_region);
  const std::string tmp = path + ".tmp";
  const std::string bytes = serialize(snapshot);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw SnapshotError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      throw SnapshotError("cannot write " + tmp);
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw SnapshotError("cannot move snapshot into place: " + path);
  }
  return path;
}

std::vector<std::string> list_snapshots(const std::string& dir) {
  std::vector<std::pair<RegionId, std::string>> found;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return {};
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (!name.starts_with("snapshot_") || !name.ends_with(".ralc")) continue;
    if (const auto region = header_region(entry.path().string())) found.emplace_back(*region, entry.path().string());
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> out;
  for (auto& [region, path] : found) out.push_back(std::move(path));
  return out;
}

MapSnapshot restore_latest(const std::string& dir, std::uint64_t config_hash) {
  const std::vector<std::string> all = list_snapshots(dir);
  if (all.empty()) throw ColdStart();
  MapSnapshot s = deserialize(read_file(all.back()));
  if (s.config_hash != config_hash) throw SnapshotError("snapshot config hash does not match the running config");
  return s;
}

}  // namespace ralc
