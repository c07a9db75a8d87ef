#include "ckm/env/environment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace ckm::env {

std::string Cell::str() const {
  return "(" + std::to_string(row) + ", " + std::to_string(col) + ")";
}

double BsLocation::r_max(std::size_t side) {
  return std::numbers::sqrt2 / 2.0 * static_cast<double>(side);
}

BsLocation BsLocation::from_cell(Cell cell, std::size_t side) {
  const double half = static_cast<double>(side) / 2.0;
  const double x = cell.col + 0.5 - half;
  const double y = half - (cell.row + 0.5);
  BsLocation loc;
  loc.cell = cell;
  loc.radius = std::min(std::hypot(x, y), r_max(side));
  double theta = std::atan2(-x, y);
  if (theta < 0.0) theta += 2.0 * std::numbers::pi;
  if (theta >= 2.0 * std::numbers::pi) theta = 0.0;
  loc.theta = theta;
  return loc;
}

BsLocation BsLocation::from_polar(double theta, double radius, std::size_t side) {
  if (radius < 0.0 || radius > r_max(side)) {
    throw RangeError("radius " + std::to_string(radius) + " outside [0, " +
                     std::to_string(r_max(side)) + "]");
  }
  theta = std::fmod(theta, 2.0 * std::numbers::pi);
  if (theta < 0.0) theta += 2.0 * std::numbers::pi;
  const double half = static_cast<double>(side) / 2.0;
  const double x = -radius * std::sin(theta);
  const double y = radius * std::cos(theta);
  const int last = static_cast<int>(side) - 1;
  const int col = std::clamp(static_cast<int>(std::floor(x + half)), 0, last);
  const int row = std::clamp(static_cast<int>(std::floor(half - y)), 0, last);
  return {theta, radius, {row, col}};
}

double cell_distance(Cell a, Cell b) {
  return std::hypot(static_cast<double>(a.row - b.row), static_cast<double>(a.col - b.col));
}

EnvironmentMap::EnvironmentMap(std::size_t side, double cell_size_m,
                               std::vector<std::uint8_t> occupancy, std::uint64_t seed)
    : side_(side), cell_size_m_(cell_size_m), occupancy_(std::move(occupancy)), seed_(seed) {
  if (occupancy_.size() != side * side) {
    throw std::invalid_argument("occupancy has " + std::to_string(occupancy_.size()) +
                                " cells, expected " + std::to_string(side * side));
  }
  if (!(cell_size_m > 0.0)) throw std::invalid_argument("cell size must be positive");
}

std::vector<Cell> EnvironmentMap::free_cells() const {
  std::vector<Cell> out;
  for (std::size_t i = 0; i < occupancy_.size(); ++i)
    if (!occupancy_[i]) out.push_back(cell_at(i));
  return out;
}

double EnvironmentMap::occupancy_fraction() const {
  std::size_t n = 0;
  for (auto v : occupancy_) n += v != 0;
  return occupancy_.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(occupancy_.size());
}

EnvironmentMap generate_environment(std::uint64_t seed, const GeneratorConfig& config) {
  const auto side = config.side;
  if (side < 16) throw GenerationError("map side must be at least 16, got " + std::to_string(side));
  const auto [cmin, cmax] = config.building_count;
  const auto [smin, smax] = config.building_size;
  if (cmin < 0 || cmax < cmin) throw GenerationError("invalid building count range");
  if (smin < 1 || smax < smin) throw GenerationError("invalid building size range");
  const int interior = static_cast<int>(side) - 2;
  if (smax > interior) {
    throw GenerationError("building size " + std::to_string(smax) + " exceeds interior " +
                          std::to_string(interior));
  }

  std::mt19937_64 rng(seed);
  // Draw integers through explicit arithmetic: distribution objects are not
  // portable across standard libraries and the maps must be reproducible.
  auto draw = [&](int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(rng() % span);
  };

  std::vector<std::uint8_t> occ(side * side, 0);
  const int count = draw(cmin, cmax);
  for (int b = 0; b < count; ++b) {
    const int h = draw(smin, smax);
    const int w = draw(smin, smax);
    const int r0 = draw(1, interior - h + 1);
    const int c0 = draw(1, interior - w + 1);
    for (int r = r0; r < r0 + h; ++r)
      for (int c = c0; c < c0 + w; ++c) occ[static_cast<std::size_t>(r) * side + c] = 1;
  }
  return EnvironmentMap(side, config.cell_size_m, std::move(occ), seed);
}

}  // namespace ckm::env
