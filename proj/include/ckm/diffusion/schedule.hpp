#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "ckm/numerics/tensor.hpp"

namespace ckm::diffusion {

/// Variance schedule indexed by t = 1..T; alpha_bar(0) := 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(std::size_t steps = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02);
  explicit NoiseSchedule(std::vector<double> betas);

  std::size_t steps() const { return beta_.size() - 1; }
  double beta(std::size_t t) const { return beta_.at(check(t)); }
  double alpha(std::size_t t) const { return 1.0 - beta(t); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
  /// (1 - alpha_t)(1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(std::size_t t) const;

  /// Throws nd::ContractError unless 1 <= t <= T.
  std::size_t check(std::size_t t) const;
  /// Throws std::logic_error naming the first violated schedule invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  std::vector<double> beta_;       // beta_[0] unused
  std::vector<double> alpha_bar_;  // alpha_bar_[0] = 1
  double beta_start_ = 0.0, beta_end_ = 0.0;
};

/// x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise.
std::vector<double> forward_step(std::span<const double> x_prev, std::size_t t,
                                 std::span<const double> noise, const NoiseSchedule& s);
/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) noise.
std::vector<double> forward_jump(std::span<const double> x0, std::size_t t,
                                 std::span<const double> noise, const NoiseSchedule& s);
/// Differentiable-graph-free tensor form used by training.
nd::Tensor forward_jump(const nd::Tensor& x0, std::size_t t, const nd::Tensor& noise,
                        const NoiseSchedule& s);

struct PosteriorStats {
  std::vector<double> mean;
  double variance = 0.0;
};

/// mu_t = x_t / sqrt(alpha_t) - (1 - alpha_t) / (sqrt(1 - alpha_bar_t) sqrt(alpha_t)) eps_hat.
PosteriorStats posterior_stats(std::span<const double> x_t, std::span<const double> eps_hat,
                               std::size_t t, const NoiseSchedule& s);

/// Mean of (eps - eps_hat)^2 over all elements.
double denoising_loss(std::span<const double> eps, std::span<const double> eps_hat);
nd::Tensor denoising_loss(const nd::Tensor& eps, const nd::Tensor& eps_hat);

}  // namespace ckm::diffusion
