#include "ckm/diffusion/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "ckm/numerics/ops.hpp"

namespace ckm::diffusion {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw nd::ContractError("schedule needs at least one step");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  NoiseSchedule s(std::move(betas));
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  return s;
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) {
  if (betas.empty()) throw nd::ContractError("schedule needs at least one step");
  beta_.reserve(betas.size() + 1);
  beta_.push_back(0.0);
  beta_.insert(beta_.end(), betas.begin(), betas.end());
  alpha_bar_.assign(beta_.size(), 1.0);
  for (std::size_t t = 1; t < beta_.size(); ++t) {
    if (!(beta_[t] > 0.0 && beta_[t] < 1.0))
      throw nd::ContractError("beta_" + std::to_string(t) + " outside (0, 1)");
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
  }
  beta_start_ = betas.front();
  beta_end_ = betas.back();
}

std::size_t NoiseSchedule::check(std::size_t t) const {
  if (t < 1 || t > steps()) {
    throw nd::ContractError("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  }
  return t;
}

double NoiseSchedule::posterior_variance(std::size_t t) const {
  check(t);
  return (1.0 - alpha(t)) * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
}

void NoiseSchedule::validate() const {
  for (std::size_t t = 1; t <= steps(); ++t) {
    if (!(beta_[t] > 0.0 && beta_[t] < 1.0)) throw std::logic_error("beta out of (0, 1)");
    if (t > 1 && beta_[t] < beta_[t - 1]) throw std::logic_error("beta is not non-decreasing");
    if (!(alpha_bar_[t] < alpha_bar_[t - 1])) throw std::logic_error("alpha_bar not decreasing");
  }
  if (!(alpha_bar_.back() < 1e-3)) throw std::logic_error("alpha_bar_T is not below 1e-3");
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"kind", "linear"}, {"steps", steps()}, {"beta_start", beta_start_},
          {"beta_end", beta_end_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  if (j.value("kind", "linear") != "linear")
    throw std::invalid_argument("unsupported schedule kind " + j.at("kind").get<std::string>());
  return linear(j.at("steps").get<std::size_t>(), j.at("beta_start").get<double>(),
                j.at("beta_end").get<double>());
}

namespace {

void same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw nd::ContractError(std::string(what) + ": sizes " + std::to_string(a) + " and " +
                            std::to_string(b) + " differ");
  }
}

}  // namespace

std::vector<double> forward_step(std::span<const double> x_prev, std::size_t t,
                                 std::span<const double> noise, const NoiseSchedule& s) {
  s.check(t);
  same_size(x_prev.size(), noise.size(), "forward_step");
  const double a = std::sqrt(1.0 - s.beta(t)), b = std::sqrt(s.beta(t));
  std::vector<double> out(x_prev.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * noise[i];
  return out;
}

std::vector<double> forward_jump(std::span<const double> x0, std::size_t t,
                                 std::span<const double> noise, const NoiseSchedule& s) {
  s.check(t);
  same_size(x0.size(), noise.size(), "forward_jump");
  const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

nd::Tensor forward_jump(const nd::Tensor& x0, std::size_t t, const nd::Tensor& noise,
                        const NoiseSchedule& s) {
  if (x0.shape() != noise.shape()) {
    throw nd::ContractError("forward_jump: shapes " + nd::shape_str(x0.shape()) + " and " +
                            nd::shape_str(noise.shape()) + " differ");
  }
  return nd::Tensor::from(x0.shape(), forward_jump(x0.data(), t, noise.data(), s));
}

PosteriorStats posterior_stats(std::span<const double> x_t, std::span<const double> eps_hat,
                               std::size_t t, const NoiseSchedule& s) {
  s.check(t);
  same_size(x_t.size(), eps_hat.size(), "posterior_stats");
  const double sa = std::sqrt(s.alpha(t));
  const double c = (1.0 - s.alpha(t)) / (std::sqrt(1.0 - s.alpha_bar(t)) * sa);
  PosteriorStats out;
  out.mean.resize(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out.mean[i] = x_t[i] / sa - c * eps_hat[i];
  out.variance = s.posterior_variance(t);
  return out;
}

double denoising_loss(std::span<const double> eps, std::span<const double> eps_hat) {
  same_size(eps.size(), eps_hat.size(), "denoising_loss");
  if (eps.empty()) throw nd::ContractError("denoising_loss of empty arrays");
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) s += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
  return s / static_cast<double>(eps.size());
}

nd::Tensor denoising_loss(const nd::Tensor& eps, const nd::Tensor& eps_hat) {
  if (eps.shape() != eps_hat.shape()) {
    throw nd::ContractError("denoising_loss: shapes " + nd::shape_str(eps.shape()) + " and " +
                            nd::shape_str(eps_hat.shape()) + " differ");
  }
  return nd::mse(eps_hat, eps);
}

}  // namespace ckm::diffusion
