#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "ckm/env/ckm_map.hpp"

// Dominant-path surrogate. Paths are polylines between cell centres that may
// bend only at convex building corners (the free cell diagonal to a building's
// corner). Shortest such paths are found with Dijkstra over the corner
// visibility graph, so line-of-sight cells get exactly the Euclidean distance
// and every bend adds a diffraction penalty.

namespace ckm::env {

bool line_of_sight(const EnvironmentMap& env, Cell a, Cell b) {
  const int dx = b.col - a.col;
  const int dy = b.row - a.row;
  const int nx = std::abs(dx);
  const int ny = std::abs(dy);
  const int sx = dx > 0 ? 1 : -1;
  const int sy = dy > 0 ? 1 : -1;
  Cell p = a;
  if (env.is_building(p)) return false;
  // Walk every cell whose interior the segment crosses.
  for (int ix = 0, iy = 0; ix < nx || iy < ny;) {
    const long decision = static_cast<long>(1 + 2 * ix) * ny - static_cast<long>(1 + 2 * iy) * nx;
    if (decision == 0) {
      // Exactly through a lattice vertex: only a squeeze between two
      // buildings blocks, touching a single corner does not.
      const bool side_a = env.is_building({p.row, p.col + sx});
      const bool side_b = env.is_building({p.row + sy, p.col});
      if (side_a && side_b) return false;
      p.col += sx;
      p.row += sy;
      ++ix;
      ++iy;
    } else if (decision < 0) {
      p.col += sx;
      ++ix;
    } else {
      p.row += sy;
      ++iy;
    }
    if (env.is_building(p)) return false;
  }
  return true;
}

PropagationGraph::PropagationGraph(const EnvironmentMap& env) : env_(&env) {
  const int side = static_cast<int>(env.side());
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      if (env.is_building({r, c})) continue;
      bool corner = false;
      for (int dr : {-1, 1}) {
        for (int dc : {-1, 1}) {
          const Cell diag{r + dr, c + dc}, vert{r + dr, c}, horiz{r, c + dc};
          if (!env.in_bounds(diag)) continue;
          if (env.is_building(diag) && !env.is_building(vert) && !env.is_building(horiz))
            corner = true;
        }
      }
      if (corner) corners_.push_back({r, c});
    }
  }

  const std::size_t cells = env.occupancy().size();
  visible_.assign(corners_.size() * cells, 0);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(corners_.size()); ++k) {
    for (std::size_t i = 0; i < cells; ++i) {
      const Cell u = env.cell_at(i);
      if (!env.is_building(u))
        visible_[k * cells + i] = line_of_sight(env, corners_[k], u) ? 1 : 0;
    }
  }
}

DominantPaths dominant_paths(const PropagationGraph& graph, Cell bs) {
  const auto& env = graph.env();
  if (!env.in_bounds(bs)) throw PlacementError("BS cell " + bs.str() + " is outside the map");
  if (env.is_building(bs)) throw PlacementError("BS cell " + bs.str() + " is inside a building");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr double kTieEps = 1e-9;
  const auto& corners = graph.corners();
  const std::size_t k = corners.size();
  const std::size_t cells = env.occupancy().size();

  // Dijkstra over {corners}; the BS is the implicit source. bends counts the
  // direction changes strictly before reaching the corner.
  std::vector<double> dist(k, kInf);
  std::vector<int> bends(k, 0);
  std::vector<char> done(k, 0);
  for (std::size_t j = 0; j < k; ++j) {
    if (graph.corner_sees(j, env.index(bs))) dist[j] = cell_distance(bs, corners[j]);
  }
  for (std::size_t iter = 0; iter < k; ++iter) {
    std::size_t best = k;
    for (std::size_t j = 0; j < k; ++j) {
      if (done[j] || dist[j] == kInf) continue;
      if (best == k || dist[j] < dist[best] - kTieEps ||
          (std::abs(dist[j] - dist[best]) <= kTieEps && bends[j] < bends[best]))
        best = j;
    }
    if (best == k) break;
    done[best] = 1;
    for (std::size_t j = 0; j < k; ++j) {
      if (done[j] || !graph.corner_sees(best, env.index(corners[j]))) continue;
      const double cand = dist[best] + cell_distance(corners[best], corners[j]);
      const int cand_bends = bends[best] + 1;
      if (cand < dist[j] - kTieEps ||
          (std::abs(cand - dist[j]) <= kTieEps && cand_bends < bends[j])) {
        dist[j] = cand;
        bends[j] = cand_bends;
      }
    }
  }

  DominantPaths out;
  out.length_cells.assign(cells, kInf);
  out.turns.assign(cells, 0);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(cells); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const Cell u = env.cell_at(i);
    if (env.is_building(u)) continue;
    if (line_of_sight(env, bs, u)) {
      out.length_cells[i] = cell_distance(bs, u);
      continue;
    }
    double best = kInf;
    int best_turns = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (dist[j] == kInf || !graph.corner_sees(j, i)) continue;
      const bool at_corner = corners[j] == u;
      const double cand = dist[j] + (at_corner ? 0.0 : cell_distance(corners[j], u));
      const int cand_turns = bends[j] + (at_corner ? 0 : 1);
      if (cand < best - kTieEps || (std::abs(cand - best) <= kTieEps && cand_turns < best_turns)) {
        best = cand;
        best_turns = cand_turns;
      }
    }
    out.length_cells[i] = best;
    out.turns[i] = best_turns;
  }
  return out;
}

Ckm dpm_channel_gain(const PropagationGraph& graph, const BsLocation& bs, const DpmParams& params,
                     const std::string& env_ref) {
  const auto& env = graph.env();
  const auto paths = dominant_paths(graph, bs.cell);
  const std::size_t cells = env.occupancy().size();
  std::vector<double> gains(cells, kGainMaxDb);
  std::vector<std::uint8_t> mask(cells, 0);
  for (std::size_t i = 0; i < cells; ++i) {
    if (env.occupancy()[i]) {
      mask[i] = 1;
      continue;
    }
    const double len = paths.length_cells[i];
    if (!std::isfinite(len)) continue;  // enclosed pocket: no path, weakest level
    const double d_m = std::max(len * env.cell_size_m(), 1.0);
    const double pl = params.pl0_db + 10.0 * params.path_loss_exponent * std::log10(d_m) +
                      params.diffraction_db_per_turn * paths.turns[i];
    gains[i] = std::clamp(pl, kGainMinDb, kGainMaxDb);
  }
  return Ckm::from_gains(env.side(), std::move(gains), std::move(mask), bs, env_ref);
}

Ckm dpm_channel_gain(const EnvironmentMap& env, const BsLocation& bs, const DpmParams& params,
                     const std::string& env_ref) {
  if (!env.in_bounds(bs.cell)) throw PlacementError("BS cell " + bs.cell.str() + " is outside the map");
  if (env.is_building(bs.cell))
    throw PlacementError("BS cell " + bs.cell.str() + " is inside a building");
  const PropagationGraph graph(env);
  return dpm_channel_gain(graph, bs, params, env_ref);
}

}  // namespace ckm::env
