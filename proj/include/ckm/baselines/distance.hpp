#pragma once

#include <vector>

#include "ckm/env/ckm_map.hpp"

namespace ckm::baselines {

struct SourceCkm {
  const env::Ckm* ckm = nullptr;
  env::BsLocation location;
};

/// w_i = exp(-gamma d_i) / sum_j exp(-gamma d_j), d_i in cells between BS cell centres.
std::vector<double> distance_weights(const std::vector<env::BsLocation>& sources,
                                     const env::BsLocation& target, double gamma = 0.1);

/// Cell-wise weighted average of the source gray maps. The result carries the
/// union of the source masks and is owned by the target location.
env::Ckm distance_weighted_ckm(const std::vector<SourceCkm>& sources, const env::BsLocation& target,
                               double gamma = 0.1);

/// One-hot L x L map with 1 at the BS cell.
std::vector<double> bs_location_map(const env::BsLocation& bs, std::size_t side);

/// (1 - omega) * gray + omega * bs_map.
std::vector<double> modality_weighted_input(const std::vector<double>& gray,
                                            const std::vector<double>& bs_map, double omega = 0.5);

}  // namespace ckm::baselines
