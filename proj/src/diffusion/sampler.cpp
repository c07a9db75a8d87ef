#include "ckm/diffusion/sampler.hpp"

#include <cmath>

namespace ckm::diffusion {

std::vector<std::size_t> sampling_timesteps(std::size_t total, std::size_t steps) {
  if (steps == 0 || steps > total) {
    throw nd::ContractError("sampler steps " + std::to_string(steps) + " outside [1, " +
                            std::to_string(total) + "]");
  }
  std::vector<std::size_t> ts;
  for (std::size_t i = steps; i >= 1; --i) {
    const auto t = static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(total) / static_cast<double>(steps)));
    ts.push_back(std::max<std::size_t>(t, 1));
  }
  return ts;
}

nd::Tensor standard_normal(const nd::Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(nd::numel(shape));
  for (auto& x : v) x = n(rng);
  return nd::Tensor::from(shape, std::move(v));
}

nd::Tensor sample(const EpsFn& eps, const nd::Shape& shape, const NoiseSchedule& schedule,
                  const SamplerConfig& config, const X0Projection& project) {
  const auto ts = sampling_timesteps(schedule.steps(), config.steps);
  nd::NoGradGuard no_grad;
  std::mt19937_64 rng(config.seed);
  auto z = standard_normal(shape, rng).detach();
  std::vector<double> x(z.data().begin(), z.data().end());
  const bool stochastic = config.kind == SamplerKind::kStochastic;
  const bool ancestral = stochastic && config.steps == schedule.steps();

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const std::size_t prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const auto e = eps(nd::Tensor::from(shape, x), t);
    if (e.shape() != shape) {
      throw nd::ShapeError("noise predictor returned " + nd::shape_str(e.shape()) + " for input " +
                           nd::shape_str(shape));
    }
    std::vector<double> eh(e.data().begin(), e.data().end());
    const double ab = schedule.alpha_bar(t);
    const double sab = std::sqrt(ab), s1ab = std::sqrt(1.0 - ab);
    if (project) {
      std::vector<double> x0(x.size());
      for (std::size_t k = 0; k < x.size(); ++k) x0[k] = (x[k] - s1ab * eh[k]) / sab;
      project(x0);
      if (x0.size() != x.size()) throw nd::ShapeError("x0 projection changed the batch size");
      for (std::size_t k = 0; k < x.size(); ++k) eh[k] = (x[k] - sab * x0[k]) / s1ab;
    }

    if (ancestral) {
      auto post = posterior_stats(x, eh, t, schedule);
      const double sigma = std::sqrt(post.variance);
      if (sigma > 0.0) {
        const auto n = standard_normal(shape, rng);
        for (std::size_t k = 0; k < x.size(); ++k) post.mean[k] += sigma * n.data()[k];
      }
      x = std::move(post.mean);
      continue;
    }

    const double ab_prev = schedule.alpha_bar(prev);
    double sigma = 0.0;
    if (stochastic && prev > 0)
      sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
    const double dir = std::sqrt(std::max(1.0 - ab_prev - sigma * sigma, 0.0));
    const double sab_prev = std::sqrt(ab_prev);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double x0 = (x[k] - s1ab * eh[k]) / sab;
      x[k] = sab_prev * x0 + dir * eh[k];
    }
    if (sigma > 0.0) {
      const auto n = standard_normal(shape, rng);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] += sigma * n.data()[k];
    }
  }
  return nd::Tensor::from(shape, std::move(x));
}

}  // namespace ckm::diffusion
