#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "ckm/env/environment.hpp"
#include "ckm/numerics/tensor.hpp"

// BS location encoding: a polar location l = (theta, f_r(r)) becomes a
// block-diagonal rotation whose 4x4 blocks rotate lanes (0,1) by theta and
// lanes (2,3) by f_r(r). Rotating queries and keys this way makes their dot
// products depend only on the location difference.

namespace ckm::bsle {

struct PolarLocation {
  double theta = 0.0;             // [0, 2pi)
  double radius_projected = 0.0;  // f_r(r) = r / r_max * pi, in [0, pi]

  static PolarLocation from_bs(const env::BsLocation& bs, std::size_t side);
};

/// (r / r_max) * pi; throws env::RangeError outside [0, r_max].
double project_radius(double r, double r_max);

/// a ⊖ b: theta difference wrapped to [0, 2pi), projected-radius difference plain.
PolarLocation relative(const PolarLocation& a, const PolarLocation& b);

class RotationMatrix {
 public:
  RotationMatrix(const PolarLocation& loc, std::size_t dim);

  std::size_t dim() const { return dim_; }
  /// The repeated 4x4 block, row-major.
  const std::array<double, 16>& block() const { return block_; }
  std::vector<double> dense() const;
  /// out = R * in (transpose = false) or R^T * in.
  void apply(std::span<const double> in, std::span<double> out, bool transpose = false) const;

 private:
  std::size_t dim_;
  double ct_, st_, cr_, sr_;
  std::array<double, 16> block_{};
};

/// Throws nd::ContractError when d is not a multiple of 4.
RotationMatrix build_rotation(const PolarLocation& loc, std::size_t d);

/// Rotates every row (length d) of a row-major token matrix by R(loc).
std::vector<double> apply_bsle(std::span<const double> tokens, std::size_t d,
                               const PolarLocation& loc);

/// Differentiable per-row rotation: x has last dimension d and exactly
/// locs.size() rows; row i is rotated by R(locs[i]).
nd::Tensor rotate_rows(const nd::Tensor& x, const std::vector<PolarLocation>& locs);

}  // namespace ckm::bsle
