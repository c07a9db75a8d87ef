#include "ckm/bsle/bsle.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ckm::bsle {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

void require_divisible(std::size_t d) {
  if (d == 0 || d % 4 != 0) {
    throw nd::ContractError("token dimension " + std::to_string(d) +
                            " is not a positive multiple of 4");
  }
}

}  // namespace

double project_radius(double r, double r_max) {
  if (!(r_max > 0.0)) throw env::RangeError("r_max must be positive");
  if (!(r >= 0.0 && r <= r_max)) {
    std::ostringstream os;
    os << "radius " << r << " outside [0, " << r_max << "]";
    throw env::RangeError(os.str());
  }
  return r / r_max * std::numbers::pi;
}

PolarLocation PolarLocation::from_bs(const env::BsLocation& bs, std::size_t side) {
  return {wrap_angle(bs.theta), project_radius(bs.radius, env::BsLocation::r_max(side))};
}

PolarLocation relative(const PolarLocation& a, const PolarLocation& b) {
  return {wrap_angle(a.theta - b.theta), a.radius_projected - b.radius_projected};
}

RotationMatrix::RotationMatrix(const PolarLocation& loc, std::size_t dim)
    : dim_(dim),
      ct_(std::cos(loc.theta)),
      st_(std::sin(loc.theta)),
      cr_(std::cos(loc.radius_projected)),
      sr_(std::sin(loc.radius_projected)) {
  require_divisible(dim);
  block_ = {ct_, -st_, 0.0, 0.0,  //
            st_, ct_,  0.0, 0.0,  //
            0.0, 0.0,  cr_, -sr_,  //
            0.0, 0.0,  sr_, cr_};
}

std::vector<double> RotationMatrix::dense() const {
  std::vector<double> m(dim_ * dim_, 0.0);
  for (std::size_t b = 0; b < dim_; b += 4)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) m[(b + i) * dim_ + b + j] = block_[i * 4 + j];
  return m;
}

void RotationMatrix::apply(std::span<const double> in, std::span<double> out,
                           bool transpose) const {
  if (in.size() != dim_ || out.size() != dim_) {
    throw nd::ContractError("rotation of dimension " + std::to_string(dim_) +
                            " applied to a vector of length " + std::to_string(in.size()));
  }
  const double st = transpose ? -st_ : st_;
  const double sr = transpose ? -sr_ : sr_;
  for (std::size_t b = 0; b < dim_; b += 4) {
    const double x0 = in[b], x1 = in[b + 1], x2 = in[b + 2], x3 = in[b + 3];
    out[b] = ct_ * x0 - st * x1;
    out[b + 1] = st * x0 + ct_ * x1;
    out[b + 2] = cr_ * x2 - sr * x3;
    out[b + 3] = sr * x2 + cr_ * x3;
  }
}

RotationMatrix build_rotation(const PolarLocation& loc, std::size_t d) {
  return RotationMatrix(loc, d);
}

std::vector<double> apply_bsle(std::span<const double> tokens, std::size_t d,
                               const PolarLocation& loc) {
  require_divisible(d);
  if (tokens.size() % d != 0) {
    throw nd::ContractError("token buffer of " + std::to_string(tokens.size()) +
                            " values is not a whole number of rows of width " + std::to_string(d));
  }
  const RotationMatrix rot(loc, d);
  std::vector<double> out(tokens.size());
  for (std::size_t r = 0; r < tokens.size(); r += d)
    rot.apply(tokens.subspan(r, d), std::span<double>(out).subspan(r, d));
  return out;
}

nd::Tensor rotate_rows(const nd::Tensor& x, const std::vector<PolarLocation>& locs) {
  if (x.rank() < 1) throw nd::ShapeError("rotate_rows needs at least one dimension");
  const std::size_t d = x.shape().back();
  require_divisible(d);
  const std::size_t rows = x.size() / d;
  if (rows != locs.size()) {
    throw nd::ShapeError("rotate_rows: tensor " + nd::shape_str(x.shape()) + " has " +
                         std::to_string(rows) + " rows but " + std::to_string(locs.size()) +
                         " locations were given");
  }
  std::vector<RotationMatrix> rots;
  rots.reserve(rows);
  for (const auto& l : locs) rots.emplace_back(l, d);

  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r)
    rots[r].apply(in.subspan(r * d, d), std::span<double>(out).subspan(r * d, d));

  return nd::make_result(x.shape(), std::move(out), {x},
                         [rots = std::move(rots), d](nd::Node& self) {
                           nd::Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& gp = p.ensure_grad();
                           std::vector<double> tmp(d);
                           for (std::size_t r = 0; r < rots.size(); ++r) {
                             rots[r].apply(std::span<const double>(self.grad).subspan(r * d, d),
                                           tmp, true);
                             for (std::size_t j = 0; j < d; ++j) gp[r * d + j] += tmp[j];
                           }
                         });
}

}  // namespace ckm::bsle
