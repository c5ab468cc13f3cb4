#pragma once

#include <ralc/grid.hpp>

#include <array>
#include <stdexcept>
#include <string>

namespace ralc {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MapClass { occupied, unoccupied, unknown };

const char* to_string(MapClass c);

/// Both maps cropped to their common extent; cell (x, y) refers to the same place in each.
struct AlignedMapPair {
  OccupancyMap test;
  OccupancyMap reference;
};

/// Crops to the intersection of extents using the map origins. Origins must differ by whole cells.
AlignedMapPair align(const OccupancyMap& test, const OccupancyMap& reference);

/// Intersection over union of `c`, counted over cells whose reference label is known.
/// An empty union yields 1.
double iou(const AlignedMapPair& pair, MapClass c);

/// Mean IoU over the two known classes.
double mean_iou(const AlignedMapPair& pair);

/// Exact Euclidean distance (meters) from every cell to the nearest cell of class `c`.
/// All entries are +inf when the class is absent.
Grid<double> distance_transform(const OccupancyMap& map, MapClass c);

/// Mean absolute difference of the two distance transforms over cells with known reference label.
double dte(const AlignedMapPair& pair, MapClass c);

/// Mean DTE over the two known classes.
double mean_dte(const AlignedMapPair& pair);

struct MapQuality {
  std::array<double, 3> iou_per_class{};  // occupied, unoccupied, unknown
  double miou{0};
  std::array<double, 2> dte_per_class{};  // occupied, unoccupied
  double mdte{0};
};

MapQuality evaluate_map(const OccupancyMap& test, const OccupancyMap& reference);

/// Fraction of the reference's free cells that are also free in the test map.
double free_coverage(const OccupancyMap& test, const OccupancyMap& reference);

}  // namespace ralc
