#include <doctest.h>

#include <cmath>
#include <random>

#include "ckm/deploy/placement.hpp"
#include "ckm/env/ckm_map.hpp"
#include "ckm/numerics/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace ckm;
using deploy::Rect;
using deploy::TargetRegion;
using env::Cell;

namespace {

env::EnvironmentMap open_map(std::size_t side) {
  return env::EnvironmentMap(side, 1.0, std::vector<std::uint8_t>(side * side, 0), 0);
}

env::Ckm gray_map(std::size_t side, std::vector<double> gray, std::vector<std::uint8_t> mask = {}) {
  if (mask.empty()) mask.assign(side * side, 0);
  return env::Ckm::from_gray(side, std::move(gray), std::move(mask), env::BsLocation::from_cell({0, 0}, side), "t");
}

// Random free rectangles, retried until they avoid every building.
std::vector<TargetRegion> random_regions(const env::EnvironmentMap& env, std::mt19937_64& rng,
                                         std::size_t count) {
  const int side = static_cast<int>(env.side());
  std::vector<TargetRegion> out;
  while (out.size() < count) {
    const int r0 = static_cast<int>(rng() % (side - 4)), c0 = static_cast<int>(rng() % (side - 4));
    const int h = 1 + static_cast<int>(rng() % 4), w = 1 + static_cast<int>(rng() % 4);
    auto region = TargetRegion::from_rects("R" + std::to_string(out.size()), {{r0, c0, r0 + h - 1, c0 + w - 1}});
    bool ok = true;
    for (const auto& c : region.cells) ok = ok && !env.is_building(c);
    if (ok) out.push_back(std::move(region));
  }
  return out;
}

struct OracleResult {
  std::vector<bool> feasible;
  std::vector<double> xi_mean;
  std::ptrdiff_t best = -1;
};

// Exhaustive search written independently of the library: a fresh simulator
// run per candidate, region statistics by direct loops over the dB map.
OracleResult brute_force(const env::EnvironmentMap& env, const std::vector<TargetRegion>& regions,
                         double xi_star, const std::vector<Cell>& candidates) {
  OracleResult o;
  for (const auto& cand : candidates) {
    const auto ckm = env::dpm_channel_gain(env, env::BsLocation::from_cell(cand, env.side()));
    bool feasible = true;
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : regions) {
      double lo = 1e9;
      for (const auto& c : r.cells) {
        const double gray = (ckm.gains_db()[static_cast<std::size_t>(c.row) * env.side() + c.col] - 47.0) * 0.01;
        const double q = 1.0 - gray;
        lo = std::min(lo, q);
        total += q;
        ++n;
      }
      feasible = feasible && lo >= xi_star;
    }
    o.feasible.push_back(feasible);
    o.xi_mean.push_back(total / static_cast<double>(n));
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!o.feasible[i]) continue;
    if (o.best < 0 || o.xi_mean[i] > o.xi_mean[o.best] + 1e-12) o.best = static_cast<std::ptrdiff_t>(i);
  }
  return o;
}

}  // namespace

TEST_CASE("coverage stats: worked cases") {
  const std::size_t side = 8;
  const auto regions = std::vector<TargetRegion>{TargetRegion::from_rects("a", {{1, 1, 2, 3}}),
                                                 TargetRegion::from_rects("b", {{5, 5, 5, 5}})};
  SUBCASE("constant map") {
    const auto s = deploy::coverage_stats(gray_map(side, std::vector<double>(side * side, 0.3)), regions);
    for (const auto& r : s) {
      CHECK(r.min == doctest::Approx(0.7).epsilon(1e-15));
      CHECK(r.mean == doctest::Approx(0.7).epsilon(1e-15));
    }
  }
  SUBCASE("single-cell region is its cell") {
    std::mt19937_64 rng(1);
    auto g = testing::random_values(side * side, rng, 0.0, 1.0);
    const auto s = deploy::coverage_stats(gray_map(side, g), regions);
    CHECK(s[1].min == 1.0 - g[5 * side + 5]);
    CHECK(s[1].mean == 1.0 - g[5 * side + 5]);
  }
  SUBCASE("random maps against direct loops") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      auto g = testing::random_values(side * side, rng, 0.0, 1.0);
      const auto s = deploy::coverage_stats(gray_map(side, g), regions);
      double lo = 1.0, sum = 0.0;
      for (int r = 1; r <= 2; ++r)
        for (int c = 1; c <= 3; ++c) {
          lo = std::min(lo, 1.0 - g[r * side + c]);
          sum += 1.0 - g[r * side + c];
        }
      CHECK(s[0].min == lo);
      CHECK(std::abs(s[0].mean - sum / 6.0) <= 1e-15);
    }
  }
  std::vector<std::uint8_t> mask(side * side, 0);
  mask[2 * side + 2] = 1;
  CHECK_THROWS_AS(deploy::coverage_stats(gray_map(side, std::vector<double>(side * side, 0.5), mask), regions),
                  nd::ContractError);
  CHECK_THROWS_AS(deploy::coverage_stats(gray_map(side, std::vector<double>(side * side, 0.5)), {}),
                  nd::ContractError);
}

TEST_CASE("optimizer: feasibility and contracts") {
  const auto env = open_map(16);
  const auto infer = deploy::ground_truth_infer(env);
  const std::vector<TargetRegion> regions{TargetRegion::from_rects("a", {{2, 2, 4, 4}}),
                                          TargetRegion::from_rects("b", {{10, 11, 12, 13}})};
  const auto cands = deploy::candidate_grid(env, 2);
  CHECK(cands.size() == 64);

  const auto above = deploy::optimize_placement(infer, env, regions, 1.01, cands);
  CHECK(above.feasible_empty());
  CHECK_FALSE(above.best.has_value());
  CHECK(above.to_json()["best_candidate"].is_null());

  const auto single = deploy::optimize_placement(infer, env, regions, 0.0, {{8, 8}});
  REQUIRE(single.best.has_value());
  CHECK(single.candidates[*single.best].cell == Cell{8, 8});

  CHECK_THROWS_AS(deploy::optimize_placement(infer, env, regions, 0.5, {}), nd::ContractError);
  CHECK_THROWS_AS(deploy::optimize_placement(infer, env, {}, 0.5, cands), nd::ContractError);

  // Batched inference gives the same report.
  deploy::OptimizeOptions opts;
  opts.batch = 7;
  std::size_t last_done = 0;
  opts.progress = [&](std::size_t done, std::size_t total) {
    CHECK(done > last_done);
    CHECK(total == cands.size());
    last_done = done;
  };
  const auto a = deploy::optimize_placement(infer, env, regions, 0.4, cands);
  const auto b = deploy::optimize_placement(infer, env, regions, 0.4, cands, opts);
  CHECK(last_done == cands.size());
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("optimizer: raising the threshold never grows the feasible set") {
  auto gen = env::GeneratorConfig{};
  gen.side = 32;
  gen.building_count = {2, 5};
  gen.building_size = {3, 8};
  const auto env = env::generate_environment(4, gen);
  std::mt19937_64 rng(5);
  const auto regions = random_regions(env, rng, 2);
  const auto infer = deploy::ground_truth_infer(env);
  const auto cands = deploy::candidate_grid(env, 2);
  std::vector<bool> prev(cands.size(), true);
  for (double xi = 0.0; xi <= 1.0; xi += 0.05) {
    const auto rep = deploy::optimize_placement(infer, env, regions, xi, cands);
    for (std::size_t i = 0; i < cands.size(); ++i) {
      CHECK((!rep.candidates[i].feasible || prev[i]));
      prev[i] = rep.candidates[i].feasible;
    }
  }
}

TEST_CASE("optimizer: argmax survives a positive affine rescaling of coverage") {
  auto gen = env::GeneratorConfig{};
  gen.side = 32;
  gen.building_count = {2, 5};
  gen.building_size = {3, 8};
  const auto env = env::generate_environment(9, gen);
  std::mt19937_64 rng(6);
  const auto regions = random_regions(env, rng, 2);
  const auto truth = deploy::ground_truth_infer(env);
  // quality' = 0.5 * quality  <=>  gray' = 0.5 + 0.5 * gray
  const deploy::InferFn scaled = [&](const std::vector<env::BsLocation>& t) {
    auto maps = truth(t);
    std::vector<env::Ckm> out;
    for (const auto& m : maps) {
      std::vector<double> g(m.gray());
      for (auto& v : g) v = 0.5 + 0.5 * v;
      out.push_back(env::Ckm::from_gray(m.side(), std::move(g), m.mask(), m.owner(), m.env_ref()));
    }
    return out;
  };
  const auto cands = deploy::candidate_grid(env, 2);
  for (double xi : {0.2, 0.35, 0.5}) {
    const auto a = deploy::optimize_placement(truth, env, regions, xi, cands);
    const auto b = deploy::optimize_placement(scaled, env, regions, 0.5 * xi, cands);
    CHECK(a.feasible_count == b.feasible_count);
    CHECK(a.best == b.best);
  }
}

TEST_CASE("optimizer equals the exhaustive oracle on seeded 32x32 instances") {
  auto gen = env::GeneratorConfig{};
  gen.side = 32;
  gen.building_count = {2, 5};
  gen.building_size = {3, 8};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CAPTURE(seed);
    const auto env = env::generate_environment(seed, gen);
    std::mt19937_64 rng(seed * 31);
    const auto regions = random_regions(env, rng, 2);
    const auto cands = deploy::candidate_grid(env, 1);
    const double xi = 0.3 + 0.02 * static_cast<double>(seed);
    const auto rep = deploy::optimize_placement(deploy::ground_truth_infer(env), env, regions, xi, cands);
    const auto oracle = brute_force(env, regions, xi, cands);
    for (std::size_t i = 0; i < cands.size(); ++i) CHECK(rep.candidates[i].feasible == oracle.feasible[i]);
    CHECK(rep.feasible_empty() == (oracle.best < 0));
    if (oracle.best >= 0) {
      REQUIRE(rep.best.has_value());
      CHECK(rep.candidates[*rep.best].cell == cands[oracle.best]);
    }
  }
}
