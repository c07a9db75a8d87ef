#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ckm::env {

/// Path-loss range stored in a CKM and its gray-scale encoding
/// (0.01 gray per dB, 47 dB -> 0, 147 dB -> 1).
inline constexpr double kGainMinDb = 47.0;
inline constexpr double kGainMaxDb = 147.0;
inline constexpr double kGrayPerDb = 0.01;

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlacementError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
  std::string str() const;
};

/// Polar BS location about the map centre. theta is measured counter-clockwise
/// from the upward direction (decreasing row index) and lies in [0, 2pi);
/// radius is in cells and never exceeds r_max = (sqrt(2)/2) * L.
struct BsLocation {
  double theta = 0.0;
  double radius = 0.0;
  Cell cell;

  static double r_max(std::size_t side);
  /// Location of a cell centre.
  static BsLocation from_cell(Cell cell, std::size_t side);
  /// Any polar point inside the disc; the cell is the one containing it (clamped).
  static BsLocation from_polar(double theta, double radius, std::size_t side);
};

/// Euclidean distance between cell centres, in cells.
double cell_distance(Cell a, Cell b);

/// L x L occupancy grid (true = building). Border cells are always free.
class EnvironmentMap {
 public:
  EnvironmentMap() = default;
  EnvironmentMap(std::size_t side, double cell_size_m, std::vector<std::uint8_t> occupancy,
                 std::uint64_t seed);

  std::size_t side() const { return side_; }
  double cell_size_m() const { return cell_size_m_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::uint8_t>& occupancy() const { return occupancy_; }

  bool in_bounds(Cell c) const {
    return c.row >= 0 && c.col >= 0 && c.row < static_cast<int>(side_) &&
           c.col < static_cast<int>(side_);
  }
  bool is_building(Cell c) const { return occupancy_[index(c)] != 0; }
  std::size_t index(Cell c) const {
    return static_cast<std::size_t>(c.row) * side_ + static_cast<std::size_t>(c.col);
  }
  Cell cell_at(std::size_t index) const {
    return {static_cast<int>(index / side_), static_cast<int>(index % side_)};
  }
  std::vector<Cell> free_cells() const;
  double occupancy_fraction() const;

 private:
  std::size_t side_ = 0;
  double cell_size_m_ = 1.0;
  std::vector<std::uint8_t> occupancy_;
  std::uint64_t seed_ = 0;
};

struct GeneratorConfig {
  std::size_t side = 64;
  double cell_size_m = 1.0;
  std::pair<int, int> building_count{4, 8};
  std::pair<int, int> building_size{4, 16};
};

/// Deterministic random city block: axis-aligned rectangles clipped to the
/// interior (rows/cols 1..L-2).
EnvironmentMap generate_environment(std::uint64_t seed, const GeneratorConfig& config);

}  // namespace ckm::env
