#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

// Masked image-quality metrics on gray maps in [0, 1]. mask[i] != 0 marks a
// building cell that is left out of every statistic.

namespace ckm::metrics {

/// sqrt of the mean squared difference over unmasked cells.
double rmse(std::span<const double> truth, std::span<const double> pred,
            std::span<const std::uint8_t> mask);

struct SsimConfig {
  std::size_t window = 8;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// Mean SSIM over all stride-1 square windows that contain no masked cell.
/// Window statistics use uniform weights and population (1/N) moments.
double ssim(std::span<const double> truth, std::span<const double> pred,
            std::span<const std::uint8_t> mask, std::size_t side, const SsimConfig& config = {});

/// 20 log10(max / rmse); +infinity when rmse == 0.
double psnr(double rmse_value, double max_value = 1.0);

struct MetricRow {
  std::string label;
  double rmse = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  double mask_coverage = 0.0;  // fraction of cells evaluated
};

MetricRow evaluate_map(std::string label, std::span<const double> truth,
                       std::span<const double> pred, std::span<const std::uint8_t> mask,
                       std::size_t side, const SsimConfig& config = {});

struct MetricReport {
  std::string title;
  SsimConfig ssim_config;
  std::vector<MetricRow> rows;

  /// Column means; psnr is +inf if any row is.
  MetricRow mean() const;
  /// psnr values that are infinite are written as the string "inf".
  nlohmann::json to_json() const;
  std::string to_table() const;
};

}  // namespace ckm::metrics
