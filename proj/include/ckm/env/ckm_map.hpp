#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckm/env/environment.hpp"

namespace ckm::env {

double gain_db_to_gray(double gain_db);
double gray_to_gain_db(double gray);

/// Channel knowledge map of one BS. gains_db and gray are kept in lock-step;
/// mask[i] != 0 marks building cells, which carry no channel knowledge.
class Ckm {
 public:
  Ckm() = default;
  static Ckm from_gains(std::size_t side, std::vector<double> gains_db,
                        std::vector<std::uint8_t> mask, BsLocation owner, std::string env_ref);
  static Ckm from_gray(std::size_t side, std::vector<double> gray, std::vector<std::uint8_t> mask,
                       BsLocation owner, std::string env_ref);

  std::size_t side() const { return side_; }
  const std::vector<double>& gains_db() const { return gains_db_; }
  const std::vector<double>& gray() const { return gray_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  const BsLocation& owner() const { return owner_; }
  const std::string& env_ref() const { return env_ref_; }

  /// Throws std::logic_error naming the first violated invariant.
  void validate() const;

 private:
  std::size_t side_ = 0;
  std::vector<double> gains_db_;
  std::vector<double> gray_;
  std::vector<std::uint8_t> mask_;
  BsLocation owner_;
  std::string env_ref_;
};

struct DpmParams {
  double pl0_db = 47.0;
  double path_loss_exponent = 2.5;
  double diffraction_db_per_turn = 10.0;
};

/// Per-environment acceleration structure: the convex building corners that
/// shortest obstacle-avoiding paths bend around, and their visibility sets.
class PropagationGraph {
 public:
  explicit PropagationGraph(const EnvironmentMap& env);

  const EnvironmentMap& env() const { return *env_; }
  const std::vector<Cell>& corners() const { return corners_; }
  bool corner_sees(std::size_t corner, std::size_t cell_index) const {
    return visible_[corner * env_->occupancy().size() + cell_index] != 0;
  }

 private:
  const EnvironmentMap* env_;
  std::vector<Cell> corners_;
  std::vector<std::uint8_t> visible_;
};

/// True when the straight segment between the two cell centres crosses no
/// building cell. Grazing a building corner counts as blocked.
bool line_of_sight(const EnvironmentMap& env, Cell a, Cell b);

/// Shortest building-avoiding path (length in cells, direction changes) from
/// bs to every cell; building or unreachable cells get length +inf.
struct DominantPaths {
  std::vector<double> length_cells;
  std::vector<int> turns;
};
DominantPaths dominant_paths(const PropagationGraph& graph, Cell bs);

Ckm dpm_channel_gain(const PropagationGraph& graph, const BsLocation& bs,
                     const DpmParams& params = {}, const std::string& env_ref = "");
Ckm dpm_channel_gain(const EnvironmentMap& env, const BsLocation& bs,
                     const DpmParams& params = {}, const std::string& env_ref = "");

}  // namespace ckm::env
