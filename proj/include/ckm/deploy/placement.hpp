#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ckm/env/ckm_map.hpp"
#include "ckm/env/environment.hpp"

// Single-BS placement search: every candidate site gets a CKM from an
// inference function and is scored on a set of target regions.
//
// Coverage quality of a cell is 1 - gray, so larger is better (lower path
// loss). A candidate is feasible when every region's minimum quality reaches
// xi_star; among feasible candidates the one with the largest mean quality
// wins, ties going to the lowest row, then the lowest column.

namespace ckm::deploy {

struct Rect {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // inclusive bounds
};

struct TargetRegion {
  std::string label;
  std::vector<env::Cell> cells;

  static TargetRegion from_rects(std::string label, const std::vector<Rect>& rects);
  /// Throws ContractError when empty, out of bounds or touching a building.
  void validate(const env::EnvironmentMap& env) const;
};

/// {"regions": [{"label", "rects": [{"row0","col0","row1","col1"}], "cells": [[r, c], ...]}]}
std::vector<TargetRegion> regions_from_json(const nlohmann::json& j);
nlohmann::json regions_to_json(const std::vector<TargetRegion>& regions);

inline double coverage_quality(double gray) { return 1.0 - gray; }

struct RegionStats {
  double min = 0.0;
  double mean = 0.0;
};

/// Min and mean coverage quality over each region. Throws ContractError for
/// an empty region list, an empty region or a region cell that is masked.
std::vector<RegionStats> coverage_stats(const env::Ckm& ckm, const std::vector<TargetRegion>& regions);

struct CandidateReport {
  env::Cell cell;
  std::vector<double> xi_min;   // per region
  std::vector<double> xi_mean_region;
  double xi_mean = 0.0;         // over the cells of all regions together
  bool feasible = false;

  nlohmann::json to_json() const;
};

struct CoverageReport {
  double xi_star = 0.0;
  std::vector<std::string> region_labels;
  std::vector<CandidateReport> candidates;  // in candidate-set order
  std::size_t feasible_count = 0;
  std::optional<std::size_t> best;          // index into candidates

  bool feasible_empty() const { return feasible_count == 0; }
  nlohmann::json to_json() const;
};

/// Scores one candidate's CKM.
CandidateReport score_candidate(const env::Ckm& ckm, const std::vector<TargetRegion>& regions,
                                double xi_star);

/// Maps target locations to CKMs, one per location, in order.
using InferFn = std::function<std::vector<env::Ckm>(const std::vector<env::BsLocation>&)>;

/// Free cells whose row and column are multiples of `stride`, row-major.
std::vector<env::Cell> candidate_grid(const env::EnvironmentMap& env, std::size_t stride = 2);

struct OptimizeOptions {
  std::size_t batch = 1;  // candidates handed to one inference call
  std::function<void(std::size_t done, std::size_t total)> progress;
};

CoverageReport optimize_placement(const InferFn& infer, const env::EnvironmentMap& env,
                                  const std::vector<TargetRegion>& regions, double xi_star,
                                  const std::vector<env::Cell>& candidates,
                                  const OptimizeOptions& options = {});

/// Inference by the propagation simulator itself.
InferFn ground_truth_infer(const env::EnvironmentMap& env, const env::DpmParams& params = {});

}  // namespace ckm::deploy
