#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ckm/metrics/metrics.hpp"
#include "ckm/numerics/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace ckm;
using namespace ckm::metrics;

namespace {

std::vector<std::uint8_t> random_mask(std::size_t n, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = b(rng);
  return m;
}

// Straightforward re-statement of the definitions, cell by cell.
double rmse_oracle(const std::vector<double>& a, const std::vector<double>& b,
                   const std::vector<std::uint8_t>& m, std::size_t side) {
  double s = 0.0, n = 0.0;
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      if (!m[r * side + c]) {
        s += std::pow(a[r * side + c] - b[r * side + c], 2);
        n += 1.0;
      }
  return std::sqrt(s / n);
}

double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b,
                   const std::vector<std::uint8_t>& m, std::size_t side, std::size_t w) {
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int count = 0;
  for (std::size_t r = 0; r + w <= side; ++r)
    for (std::size_t c = 0; c + w <= side; ++c) {
      bool clean = true;
      std::vector<double> xa, xb;
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          clean = clean && !m[(r + i) * side + c + j];
          xa.push_back(a[(r + i) * side + c + j]);
          xb.push_back(b[(r + i) * side + c + j]);
        }
      if (!clean) continue;
      const double n = static_cast<double>(xa.size());
      double ma = 0, mb = 0;
      for (std::size_t k = 0; k < xa.size(); ++k) ma += xa[k] / n, mb += xb[k] / n;
      double va = 0, vb = 0, cv = 0;
      for (std::size_t k = 0; k < xa.size(); ++k) {
        va += (xa[k] - ma) * (xa[k] - ma) / n;
        vb += (xb[k] - mb) * (xb[k] - mb) / n;
        cv += (xa[k] - ma) * (xb[k] - mb) / n;
      }
      total += (2 * ma * mb + c1) * (2 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("rmse examples and oracle") {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4};
  const std::vector<std::uint8_t> none(4, 0);
  CHECK(rmse(a, a, none) == 0.0);
  std::vector<double> b(a);
  for (auto& v : b) v += 0.1;
  CHECK(rmse(a, b, none) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(rmse(a, b, std::vector<std::uint8_t>(4, 1)), nd::ContractError);
  CHECK_THROWS_AS(rmse(a, std::vector<double>(3), none), nd::ContractError);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t side = 16 + trial % 3;
    const auto x = testing::random_values(side * side, rng, 0, 1);
    const auto y = testing::random_values(side * side, rng, 0, 1);
    const auto m = random_mask(side * side, rng, 0.2);
    CHECK(std::abs(rmse(x, y, m) - rmse_oracle(x, y, m, side)) <= 1e-12);
  }
}

TEST_CASE("ssim examples and oracle") {
  std::mt19937_64 rng(2);
  const std::size_t side = 24;
  const auto x = testing::random_values(side * side, rng, 0, 1);
  const std::vector<std::uint8_t> none(side * side, 0);
  CHECK(ssim(x, x, none, side) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> inv(x);
  for (auto& v : inv) v = 1.0 - v;
  CHECK(ssim(x, inv, none, side) < 1.0);

  // One 2x2 window, evaluated by hand: a = (0, 0.5, 0.5, 1), b = (0.2, 0.2, 0.4, 0.4).
  const std::vector<double> a{0.0, 0.5, 0.5, 1.0}, b{0.2, 0.2, 0.4, 0.4};
  const double ma = 0.5, mb = 0.3, va = 0.125, vb = 0.01, cov = 0.025;
  const double expect = (2 * ma * mb + 1e-4) * (2 * cov + 9e-4) /
                        ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
  CHECK(std::abs(ssim(a, b, std::vector<std::uint8_t>(4, 0), 2, {2, 1e-4, 9e-4}) - expect) <= 1e-10);

  for (int trial = 0; trial < 20; ++trial) {
    const auto p = testing::random_values(side * side, rng, 0, 1);
    const auto q = testing::random_values(side * side, rng, 0, 1);
    auto m = random_mask(side * side, rng, 0.003);
    CHECK(std::abs(ssim(p, q, m, side) - ssim_oracle(p, q, m, side, 8)) <= 1e-10);
    CHECK(std::abs(ssim(p, q, m, side) - ssim(q, p, m, side)) <= 1e-12);
  }
  CHECK_THROWS_AS(ssim(x, x, std::vector<std::uint8_t>(side * side, 1), side), nd::ContractError);
  CHECK_THROWS_AS(ssim(x, x, none, side, {32}), nd::ContractError);
}

TEST_CASE("psnr examples") {
  CHECK(psnr(0.1) == doctest::Approx(20.0).epsilon(1e-14));
  CHECK(psnr(0.01) == doctest::Approx(40.0).epsilon(1e-14));
  CHECK(psnr(0.0) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(psnr(-0.1), nd::ContractError);
  double last = psnr(1e-6);
  for (double r = 2e-6; r < 1.0; r *= 1.7) {
    CHECK(psnr(r) < last);
    last = psnr(r);
  }
}

TEST_CASE("rmse satisfies the triangle inequality") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = testing::random_values(100, rng, 0, 1);
    const auto b = testing::random_values(100, rng, 0, 1);
    const auto c = testing::random_values(100, rng, 0, 1);
    const auto m = random_mask(100, rng, 0.3);
    CHECK(rmse(a, c, m) <= rmse(a, b, m) + rmse(b, c, m) + 1e-12);
  }
}

TEST_CASE("report formatting") {
  std::mt19937_64 rng(4);
  const auto x = testing::random_values(256, rng, 0, 1);
  const std::vector<std::uint8_t> none(256, 0);
  MetricReport report;
  report.title = "unit";
  report.rows.push_back(evaluate_map("same", x, x, none, 16));
  report.rows.push_back(evaluate_map("offset", x, testing::random_values(256, rng, 0, 1), none, 16));
  CHECK(report.rows[0].rmse == 0.0);
  CHECK(report.rows[0].ssim == doctest::Approx(1.0));
  CHECK(std::isinf(report.rows[0].psnr));
  const auto j = report.to_json();
  CHECK(j["rows"][0]["psnr"] == "inf");
  CHECK(j["mean"]["psnr"] == "inf");
  CHECK(j["ssim"]["window"] == 8);
  const auto table = report.to_table();
  CHECK(table.find("offset") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);
}
