#include <ralc/evaluation.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ralc {

namespace {

bool is_class(CellState s, MapClass c) {
  switch (c) {
    case MapClass::occupied: return s == CellState::occupied;
    case MapClass::unoccupied: return s == CellState::free;
    case MapClass::unknown: return s == CellState::unknown;
  }
  return false;
}

// Lower envelope of parabolas rooted at the finite samples of f: exact 1D squared distance transform.
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    double s = -inf;
    while (k >= 0) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -inf : s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(d, d + n, inf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

const char* to_string(MapClass c) {
  switch (c) {
    case MapClass::occupied: return "occupied";
    case MapClass::unoccupied: return "unoccupied";
    case MapClass::unknown: return "unknown";
  }
  return "?";
}

AlignedMapPair align(const OccupancyMap& test, const OccupancyMap& reference) {
  const double res = reference.resolution;
  if (std::abs(test.resolution - res) > 1e-12) throw EvaluationError("maps differ in resolution");
  const Eigen::Vector2d shift = (test.origin - reference.origin) / res;
  const int sx = static_cast<int>(std::lround(shift.x())), sy = static_cast<int>(std::lround(shift.y()));
  if (std::abs(shift.x() - sx) > 1e-6 || std::abs(shift.y() - sy) > 1e-6)
    throw EvaluationError("map origins differ by a fraction of a cell");

  // reference cell (x, y) and test cell (x - sx, y - sy) cover the same place
  const int x0 = std::max(0, sx), y0 = std::max(0, sy);
  const int x1 = std::min(reference.width, sx + test.width), y1 = std::min(reference.height, sy + test.height);
  if (x1 <= x0 || y1 <= y0) throw EvaluationError("maps do not overlap");

  AlignedMapPair pair;
  const Eigen::Vector2d origin = reference.origin + Eigen::Vector2d(x0 * res, y0 * res);
  pair.test = OccupancyMap(x1 - x0, y1 - y0, res, origin);
  pair.reference = OccupancyMap(x1 - x0, y1 - y0, res, origin);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      pair.reference.at(x - x0, y - y0) = reference.at(x, y);
      pair.test.at(x - x0, y - y0) = test.at(x - sx, y - sy);
    }
  return pair;
}

double iou(const AlignedMapPair& pair, MapClass c) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pair.reference.cells.size(); ++i) {
    const CellState r = pair.reference.cells[i];
    if (r == CellState::unknown) continue;
    const bool in_ref = is_class(r, c), in_test = is_class(pair.test.cells[i], c);
    inter += in_ref && in_test;
    uni += in_ref || in_test;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_iou(const AlignedMapPair& pair) {
  return 0.5 * (iou(pair, MapClass::occupied) + iou(pair, MapClass::unoccupied));
}

Grid<double> distance_transform(const OccupancyMap& map, MapClass c) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Grid<double> out(map.width, map.height, map.resolution, map.origin, inf);
  bool any = false;
  for (std::size_t i = 0; i < map.cells.size(); ++i)
    if (is_class(map.cells[i], c)) {
      out.cells[i] = 0.0;
      any = true;
    }
  if (!any) return out;

  const int n = std::max(map.width, map.height);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < map.width; ++x) {
    for (int y = 0; y < map.height; ++y) f[y] = out.at(x, y);
    edt_1d(f.data(), d.data(), map.height, v, z);
    for (int y = 0; y < map.height; ++y) out.at(x, y) = d[y];
  }
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) f[x] = out.at(x, y);
    edt_1d(f.data(), d.data(), map.width, v, z);
    for (int x = 0; x < map.width; ++x) out.at(x, y) = std::sqrt(d[x]) * map.resolution;
  }
  return out;
}

double dte(const AlignedMapPair& pair, MapClass c) {
  const Grid<double> t = distance_transform(pair.test, c);
  const Grid<double> r = distance_transform(pair.reference, c);
  auto absent = [](const Grid<double>& g) {
    return std::none_of(g.cells.begin(), g.cells.end(), [](double v) { return v == 0.0; });
  };
  if (absent(t) || absent(r))
    throw EvaluationError(std::string("undefined transform for class ") + to_string(c));
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    if (pair.reference.cells[i] == CellState::unknown) continue;
    sum += std::abs(t.cells[i] - r.cells[i]);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double mean_dte(const AlignedMapPair& pair) {
  return 0.5 * (dte(pair, MapClass::occupied) + dte(pair, MapClass::unoccupied));
}

MapQuality evaluate_map(const OccupancyMap& test, const OccupancyMap& reference) {
  const AlignedMapPair pair = align(test, reference);
  MapQuality q;
  q.iou_per_class = {iou(pair, MapClass::occupied), iou(pair, MapClass::unoccupied), iou(pair, MapClass::unknown)};
  q.miou = 0.5 * (q.iou_per_class[0] + q.iou_per_class[1]);
  q.dte_per_class = {dte(pair, MapClass::occupied), dte(pair, MapClass::unoccupied)};
  q.mdte = 0.5 * (q.dte_per_class[0] + q.dte_per_class[1]);
  return q;
}

double free_coverage(const OccupancyMap& test, const OccupancyMap& reference) {
  const AlignedMapPair pair = align(test, reference);
  std::size_t both = 0, ref = 0;
  for (std::size_t i = 0; i < pair.reference.cells.size(); ++i) {
    if (pair.reference.cells[i] != CellState::free) continue;
    ++ref;
    both += pair.test.cells[i] == CellState::free;
  }
  return ref == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(ref);
}

}  // namespace ralc
