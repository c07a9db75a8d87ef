#include "ckm/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "ckm/numerics/tensor.hpp"

namespace ckm::metrics {

namespace {

void check_inputs(std::size_t truth, std::size_t pred, std::size_t mask) {
  if (truth != pred || truth != mask) {
    throw nd::ContractError("metric inputs differ in size: truth " + std::to_string(truth) +
                            ", prediction " + std::to_string(pred) + ", mask " +
                            std::to_string(mask));
  }
}

nlohmann::json psnr_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

}  // namespace

double rmse(std::span<const double> truth, std::span<const double> pred,
            std::span<const std::uint8_t> mask) {
  check_inputs(truth.size(), pred.size(), mask.size());
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (mask[i]) continue;
    const double d = truth[i] - pred[i];
    s += d * d;
    ++n;
  }
  if (n == 0) throw nd::ContractError("rmse: every cell is masked");
  return std::sqrt(s / static_cast<double>(n));
}

double ssim(std::span<const double> a, std::span<const double> b,
            std::span<const std::uint8_t> mask, std::size_t side, const SsimConfig& cfg) {
  check_inputs(a.size(), b.size(), mask.size());
  if (a.size() != side * side)
    throw nd::ContractError("ssim: maps are not " + std::to_string(side) + " x " + std::to_string(side));
  const std::size_t w = cfg.window;
  if (w == 0 || w > side)
    throw nd::ContractError("ssim window " + std::to_string(w) + " does not fit side " + std::to_string(side));

  // Masked-cell counts per window via a summed-area table.
  const std::size_t s1 = side + 1;
  std::vector<std::size_t> sat(s1 * s1, 0);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      sat[(r + 1) * s1 + c + 1] = (mask[r * side + c] ? 1 : 0) + sat[r * s1 + c + 1] +
                                  sat[(r + 1) * s1 + c] - sat[r * s1 + c];

  const double inv_n = 1.0 / static_cast<double>(w * w);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + w <= side; ++r) {
    for (std::size_t c = 0; c + w <= side; ++c) {
      const std::size_t masked =
          sat[(r + w) * s1 + c + w] - sat[r * s1 + c + w] - sat[(r + w) * s1 + c] + sat[r * s1 + c];
      if (masked) continue;
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          ma += a[(r + i) * side + c + j];
          mb += b[(r + i) * side + c + j];
        }
      ma *= inv_n;
      mb *= inv_n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double da = a[(r + i) * side + c + j] - ma;
          const double db = b[(r + i) * side + c + j] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      va *= inv_n;
      vb *= inv_n;
      cov *= inv_n;
      total += ((2 * ma * mb + cfg.c1) * (2 * cov + cfg.c2)) /
               ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
      ++windows;
    }
  }
  if (windows == 0) throw nd::ContractError("ssim: no window is free of masked cells");
  return total / static_cast<double>(windows);
}

double psnr(double rmse_value, double max_value) {
  if (!(rmse_value >= 0.0)) throw nd::ContractError("psnr of a negative rmse");
  if (rmse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(max_value / rmse_value);
}

MetricRow evaluate_map(std::string label, std::span<const double> truth,
                       std::span<const double> pred, std::span<const std::uint8_t> mask,
                       std::size_t side, const SsimConfig& config) {
  MetricRow row;
  row.label = std::move(label);
  row.rmse = rmse(truth, pred, mask);
  row.ssim = ssim(truth, pred, mask, side, config);
  row.psnr = psnr(row.rmse);
  std::size_t free = 0;
  for (auto m : mask) free += m == 0;
  row.mask_coverage = static_cast<double>(free) / static_cast<double>(mask.size());
  return row;
}

MetricRow MetricReport::mean() const {
  MetricRow m;
  m.label = "mean";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.rmse += r.rmse;
    m.ssim += r.ssim;
    m.psnr += r.psnr;
    m.mask_coverage += r.mask_coverage;
  }
  const double n = static_cast<double>(rows.size());
  m.rmse /= n;
  m.ssim /= n;
  m.psnr /= n;
  m.mask_coverage /= n;
  return m;
}

nlohmann::json MetricReport::to_json() const {
  auto row_json = [](const MetricRow& r) {
    return nlohmann::json{{"label", r.label},
                          {"rmse", r.rmse},
                          {"ssim", r.ssim},
                          {"psnr", psnr_json(r.psnr)},
                          {"mask_coverage", r.mask_coverage}};
  };
  nlohmann::json j;
  j["title"] = title;
  j["ssim"] = {{"window", ssim_config.window}, {"c1", ssim_config.c1}, {"c2", ssim_config.c2},
               {"weighting", "uniform"}};
  j["rmse_normalisation"] = "evaluated-cell count";
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  j["mean"] = row_json(mean());
  return j;
}

std::string MetricReport::to_table() const {
  std::string out;
  char line[256];
  if (!title.empty()) out += title + "\n";
  std::snprintf(line, sizeof(line), "# ssim window=%zu uniform, c1=%.1e c2=%.1e; masked cells excluded\n",
                ssim_config.window, ssim_config.c1, ssim_config.c2);
  out += line;
  std::snprintf(line, sizeof(line), "%-24s %10s %10s %10s %9s\n", "label", "RMSE", "SSIM", "PSNR",
                "coverage");
  out += line;
  auto emit = [&](const MetricRow& r) {
    std::snprintf(line, sizeof(line), "%-24s %10.4f %10.4f %10.3f %9.3f\n", r.label.c_str(), r.rmse,
                  r.ssim, r.psnr, r.mask_coverage);
    out += line;
  };
  for (const auto& r : rows) emit(r);
  if (rows.size() > 1) emit(mean());
  return out;
}

}  // namespace ckm::metrics
