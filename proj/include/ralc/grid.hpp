#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ralc {

// Numeric order encodes fusion precedence: occupied > free > unknown.
enum class CellState : std::uint8_t { unknown = 0, free = 1, occupied = 2 };

struct CellIndex {
  int x{0};
  int y{0};
  bool operator==(const CellIndex&) const = default;
  bool operator<(const CellIndex& o) const { return y != o.y ? y < o.y : x < o.x; }
};

/// Row-major 2D array; cell (0, 0) has its lower-left corner at `origin`.
template <typename T>
struct Grid {
  int width{0};
  int height{0};
  double resolution{0.05};
  Eigen::Vector2d origin{Eigen::Vector2d::Zero()};
  std::vector<T> cells;

  Grid() = default;
  Grid(int w, int h, double res, const Eigen::Vector2d& org, T fill = T{})
      : width(w), height(h), resolution(res), origin(org), cells(static_cast<std::size_t>(w) * h, fill) {}

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool in_bounds(const CellIndex& c) const { return in_bounds(c.x, c.y); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }

  T& at(int x, int y) { return cells[index(x, y)]; }
  const T& at(int x, int y) const { return cells[index(x, y)]; }
  T& at(const CellIndex& c) { return at(c.x, c.y); }
  const T& at(const CellIndex& c) const { return at(c.x, c.y); }

  CellIndex cell_of(const Eigen::Vector2d& p) const {
    return {static_cast<int>(std::floor((p.x() - origin.x()) / resolution)),
            static_cast<int>(std::floor((p.y() - origin.y()) / resolution))};
  }
  Eigen::Vector2d center(int x, int y) const {
    return origin + Eigen::Vector2d((x + 0.5) * resolution, (y + 0.5) * resolution);
  }
  Eigen::Vector2d center(const CellIndex& c) const { return center(c.x, c.y); }

  bool operator==(const Grid&) const = default;
};

using OccupancyMap = Grid<CellState>;

inline std::size_t count_cells(const OccupancyMap& m, CellState s) {
  std::size_t n = 0;
  for (CellState c : m.cells) n += (c == s);
  return n;
}

class MapIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary PGM (P5): occupied 0, unknown 127, free 255. Row 0 of the image is the top row (max y).
/// A comment line records origin and resolution so the map can be read back losslessly.
std::string encode_pgm(const OccupancyMap& map);
OccupancyMap decode_pgm(const std::string& bytes);
void write_pgm(const OccupancyMap& map, const std::string& path);
OccupancyMap read_pgm(const std::string& path);

}  // namespace ralc
