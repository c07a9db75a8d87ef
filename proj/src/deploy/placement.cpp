#include "ckm/deploy/placement.hpp"

#include <algorithm>
#include <memory>

#include "ckm/numerics/tensor.hpp"

namespace ckm::deploy {

using nlohmann::json;

TargetRegion TargetRegion::from_rects(std::string label, const std::vector<Rect>& rects) {
  TargetRegion r;
  r.label = std::move(label);
  for (const auto& q : rects) {
    if (q.row1 < q.row0 || q.col1 < q.col0)
      throw nd::ContractError("region " + r.label + ": rectangle bounds are inverted");
    for (int row = q.row0; row <= q.row1; ++row)
      for (int col = q.col0; col <= q.col1; ++col) r.cells.push_back({row, col});
  }
  return r;
}

void TargetRegion::validate(const env::EnvironmentMap& env) const {
  if (cells.empty()) throw nd::ContractError("region " + label + " has no cells");
  for (const auto& c : cells) {
    if (!env.in_bounds(c)) throw nd::ContractError("region " + label + ": cell " + c.str() + " is outside the map");
    if (env.is_building(c)) throw nd::ContractError("region " + label + ": cell " + c.str() + " is inside a building");
  }
}

std::vector<TargetRegion> regions_from_json(const json& j) {
  const auto& list = j.is_array() ? j : j.at("regions");
  std::vector<TargetRegion> out;
  for (const auto& r : list) {
    std::vector<Rect> rects;
    for (const auto& q : r.value("rects", json::array()))
      rects.push_back({q.at("row0"), q.at("col0"), q.at("row1"), q.at("col1")});
    auto region = TargetRegion::from_rects(r.value("label", "region" + std::to_string(out.size())), rects);
    for (const auto& c : r.value("cells", json::array())) region.cells.push_back({c.at(0), c.at(1)});
    out.push_back(std::move(region));
  }
  return out;
}

json regions_to_json(const std::vector<TargetRegion>& regions) {
  json list = json::array();
  for (const auto& r : regions) {
    json cells = json::array();
    for (const auto& c : r.cells) cells.push_back({c.row, c.col});
    list.push_back({{"label", r.label}, {"cells", std::move(cells)}});
  }
  return {{"regions", std::move(list)}};
}

std::vector<RegionStats> coverage_stats(const env::Ckm& ckm, const std::vector<TargetRegion>& regions) {
  if (regions.empty()) throw nd::ContractError("coverage needs at least one target region");
  const auto side = static_cast<int>(ckm.side());
  std::vector<RegionStats> out;
  for (const auto& r : regions) {
    if (r.cells.empty()) throw nd::ContractError("region " + r.label + " has no cells");
    RegionStats s;
    s.min = 2.0;
    double total = 0.0;
    for (const auto& c : r.cells) {
      if (c.row < 0 || c.col < 0 || c.row >= side || c.col >= side)
        throw nd::ContractError("region " + r.label + ": cell " + c.str() + " is outside the map");
      const std::size_t k = static_cast<std::size_t>(c.row) * ckm.side() + static_cast<std::size_t>(c.col);
      if (ckm.mask()[k])
        throw nd::ContractError("region " + r.label + ": cell " + c.str() + " is inside a building");
      const double q = coverage_quality(ckm.gray()[k]);
      s.min = std::min(s.min, q);
      total += q;
    }
    s.mean = total / static_cast<double>(r.cells.size());
    out.push_back(s);
  }
  return out;
}

CandidateReport score_candidate(const env::Ckm& ckm, const std::vector<TargetRegion>& regions,
                                double xi_star) {
  CandidateReport rep;
  rep.cell = ckm.owner().cell;
  const auto stats = coverage_stats(ckm, regions);
  double weighted = 0.0;
  std::size_t cells = 0;
  rep.feasible = true;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    rep.xi_min.push_back(stats[i].min);
    rep.xi_mean_region.push_back(stats[i].mean);
    weighted += stats[i].mean * static_cast<double>(regions[i].cells.size());
    cells += regions[i].cells.size();
    rep.feasible = rep.feasible && stats[i].min >= xi_star;
  }
  rep.xi_mean = weighted / static_cast<double>(cells);
  return rep;
}

std::vector<env::Cell> candidate_grid(const env::EnvironmentMap& env, std::size_t stride) {
  if (stride == 0) throw nd::ContractError("candidate stride must be positive");
  std::vector<env::Cell> out;
  const auto side = static_cast<int>(env.side());
  for (int r = 0; r < side; r += static_cast<int>(stride))
    for (int c = 0; c < side; c += static_cast<int>(stride))
      if (!env.is_building({r, c})) out.push_back({r, c});
  return out;
}

CoverageReport optimize_placement(const InferFn& infer, const env::EnvironmentMap& env,
                                  const std::vector<TargetRegion>& regions, double xi_star,
                                  const std::vector<env::Cell>& candidates,
                                  const OptimizeOptions& options) {
  if (candidates.empty()) throw nd::ContractError("candidate set is empty");
  if (regions.empty()) throw nd::ContractError("coverage needs at least one target region");
  for (const auto& r : regions) r.validate(env);
  for (const auto& c : candidates) {
    if (!env.in_bounds(c)) throw env::PlacementError("candidate " + c.str() + " is outside the map");
    if (env.is_building(c)) throw env::PlacementError("candidate " + c.str() + " is inside a building");
  }
  const std::size_t batch = std::max<std::size_t>(options.batch, 1);

  CoverageReport rep;
  rep.xi_star = xi_star;
  for (const auto& r : regions) rep.region_labels.push_back(r.label);
  rep.candidates.reserve(candidates.size());
  for (std::size_t start = 0; start < candidates.size(); start += batch) {
    const std::size_t end = std::min(candidates.size(), start + batch);
    std::vector<env::BsLocation> locs;
    for (std::size_t i = start; i < end; ++i) locs.push_back(env::BsLocation::from_cell(candidates[i], env.side()));
    const auto ckms = infer(locs);
    if (ckms.size() != locs.size())
      throw nd::ContractError("inference returned " + std::to_string(ckms.size()) + " maps for " +
                              std::to_string(locs.size()) + " candidates");
    for (std::size_t i = 0; i < ckms.size(); ++i) {
      auto c = score_candidate(ckms[i], regions, xi_star);
      c.cell = candidates[start + i];
      rep.candidates.push_back(std::move(c));
    }
    if (options.progress) options.progress(end, candidates.size());
  }

  for (std::size_t i = 0; i < rep.candidates.size(); ++i) {
    const auto& c = rep.candidates[i];
    if (!c.feasible) continue;
    ++rep.feasible_count;
    if (!rep.best) {
      rep.best = i;
      continue;
    }
    const auto& b = rep.candidates[*rep.best];
    if (c.xi_mean > b.xi_mean || (c.xi_mean == b.xi_mean && c.cell < b.cell)) rep.best = i;
  }
  return rep;
}

InferFn ground_truth_infer(const env::EnvironmentMap& env, const env::DpmParams& params) {
  auto graph = std::make_shared<env::PropagationGraph>(env);
  return [graph, params](const std::vector<env::BsLocation>& targets) {
    std::vector<env::Ckm> out;
    out.reserve(targets.size());
    for (const auto& t : targets) out.push_back(env::dpm_channel_gain(*graph, t, params));
    return out;
  };
}

json CandidateReport::to_json() const {
  return {{"row", cell.row},
          {"col", cell.col},
          {"xi_min", xi_min},
          {"xi_mean_region", xi_mean_region},
          {"xi_mean", xi_mean},
          {"feasible", feasible}};
}

json CoverageReport::to_json() const {
  json cands = json::array();
  for (const auto& c : candidates) cands.push_back(c.to_json());
  json best_json = nullptr;
  if (best) {
    const auto& b = candidates[*best];
    best_json = {{"row", b.cell.row}, {"col", b.cell.col}, {"xi_mean", b.xi_mean}, {"index", *best}};
  }
  return {{"quality", "1 - gray"},
          {"xi_star", xi_star},
          {"regions", region_labels},
          {"candidate_count", candidates.size()},
          {"feasible_count", feasible_count},
          {"feasible_empty", feasible_empty()},
          {"best_candidate", best_json},
          {"candidates", std::move(cands)}};
}

}  // namespace ckm::deploy
