#include "ckm/baselines/distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ckm/numerics/tensor.hpp"

namespace ckm::baselines {

std::vector<double> distance_weights(const std::vector<env::BsLocation>& sources,
                                     const env::BsLocation& target, double gamma) {
  if (sources.empty()) throw nd::ContractError("distance weighting needs at least one source");
  if (!(gamma > 0.0)) throw nd::ContractError("gamma must be positive");
  std::vector<double> w(sources.size());
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = env::cell_distance(sources[i].cell, target.cell);
    lo = std::min(lo, w[i]);
  }
  // Shift by the smallest distance: same softmax, no underflow for far sources.
  double total = 0.0;
  for (auto& v : w) total += (v = std::exp(-gamma * (v - lo)));
  for (auto& v : w) v /= total;
  return w;
}

env::Ckm distance_weighted_ckm(const std::vector<SourceCkm>& sources, const env::BsLocation& target,
                               double gamma) {
  if (sources.empty()) throw nd::ContractError("distance weighting needs at least one source");
  std::vector<env::BsLocation> locs;
  for (const auto& s : sources) locs.push_back(s.location);
  const auto w = distance_weights(locs, target, gamma);
  const std::size_t side = sources.front().ckm->side();
  std::vector<double> gray(side * side, 0.0);
  std::vector<std::uint8_t> mask(side * side, 0);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto& ckm = *sources[i].ckm;
    if (ckm.side() != side) throw nd::ContractError("source CKMs differ in size");
    for (std::size_t k = 0; k < gray.size(); ++k) {
      gray[k] += w[i] * ckm.gray()[k];
      mask[k] |= ckm.mask()[k];
    }
  }
  for (auto& g : gray) g = std::clamp(g, 0.0, 1.0);  // guards rounding just outside [0, 1]
  return env::Ckm::from_gray(side, std::move(gray), std::move(mask), target,
                             sources.front().ckm->env_ref());
}

std::vector<double> bs_location_map(const env::BsLocation& bs, std::size_t side) {
  std::vector<double> m(side * side, 0.0);
  if (bs.cell.row < 0 || bs.cell.col < 0 || bs.cell.row >= static_cast<int>(side) ||
      bs.cell.col >= static_cast<int>(side))
    throw nd::ContractError("BS cell " + bs.cell.str() + " is outside the map");
  m[static_cast<std::size_t>(bs.cell.row) * side + bs.cell.col] = 1.0;
  return m;
}

std::vector<double> modality_weighted_input(const std::vector<double>& gray,
                                            const std::vector<double>& bs_map, double omega) {
  if (gray.size() != bs_map.size()) {
    throw nd::ContractError("modality blend: map sizes " + std::to_string(gray.size()) + " and " +
                            std::to_string(bs_map.size()) + " differ");
  }
  if (!(omega >= 0.0 && omega <= 1.0)) throw nd::ContractError("omega must lie in [0, 1]");
  std::vector<double> out(gray.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - omega) * gray[i] + omega * bs_map[i];
  return out;
}

}  // namespace ckm::baselines
