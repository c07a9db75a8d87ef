#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ckm/diffusion/schedule.hpp"
#include "ckm/numerics/tensor.hpp"

namespace ckm::diffusion {

/// Noise predictor: eps_hat(z_t, t), same shape as z_t.
using EpsFn = std::function<nd::Tensor(const nd::Tensor& z_t, std::size_t t)>;

enum class SamplerKind {
  kDeterministic,  // subsampled, no noise on intermediate steps
  kStochastic,     // subsampled with posterior-matched noise; steps = T is ancestral sampling
};

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kDeterministic;
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  // Project every x0 estimate onto the data domain before stepping. The
  // sampler only applies a projection it is handed; models that know their
  // domain read this flag.
  bool clip_x0 = true;
};

/// In-place projection of an x0 estimate (flattened batch).
using X0Projection = std::function<void(std::vector<double>& x0)>;

/// Uniform-stride timesteps in descending order, starting at T:
/// t_i = round(i * T / steps) for i = steps..1.
std::vector<std::size_t> sampling_timesteps(std::size_t total, std::size_t steps);

/// Standard-normal tensor drawn from rng in row-major order.
nd::Tensor standard_normal(const nd::Shape& shape, std::mt19937_64& rng);

/// Runs the reverse chain from seeded z_T ~ N(0, I) of the given shape. With a
/// projection, each step's x0 estimate is projected and the noise estimate is
/// re-derived from it, so the step stays consistent with the current z_t.
nd::Tensor sample(const EpsFn& eps, const nd::Shape& shape, const NoiseSchedule& schedule,
                  const SamplerConfig& config, const X0Projection& project = {});

}  // namespace ckm::diffusion
