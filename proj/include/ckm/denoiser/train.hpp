#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "ckm/denoiser/model.hpp"
#include "ckm/env/dataset.hpp"
#include "ckm/numerics/optim.hpp"

namespace ckm::denoiser {

/// Raised when the training data cannot satisfy the sampling contract.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a loss or gradient stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t steps = 2000;
  std::size_t sources_min = 1;  // |I_e| is drawn uniformly from [sources_min, sources_max]
  std::size_t sources_max = 10;
  std::size_t targets = 5;      // |I_t|
  std::size_t envs_per_step = 1;
  double lr_min = 1e-5;
  double lr_max = 1e-4;
  std::size_t warmup_steps = 100;
  double grad_clip = 1.0;
  std::size_t checkpoint_every = 500;  // 0: only the final checkpoint
  std::size_t timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double latent_scale = 0.0;  // 0: estimated from the training maps
  DenoiserConfig model;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One training example: an environment with disjoint source and target BS sets.
struct TrainSample {
  std::size_t env = 0;
  std::vector<std::size_t> sources, targets;  // indices into the environment's CKMs
  std::size_t t = 0;
};

class Trainer {
 public:
  Trainer(std::vector<const env::EnvironmentRecord*> environments, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  CkmModel& model() { return *model_; }
  const CkmModel& model() const { return *model_; }
  std::size_t step() const { return optimizer_->state().step; }
  const std::vector<double>& losses() const { return losses_; }

  /// Draws the next sample from the trainer's generator (advances it).
  TrainSample draw_sample();
  /// Denoising loss of one sample; the noise is drawn from noise_rng.
  nd::Tensor sample_loss(const TrainSample& s, std::mt19937_64& noise_rng) const;

  /// One optimizer step; returns the mean loss of the step. Throws
  /// NumericalError on a non-finite loss.
  double train_step();
  /// Runs until `config().steps`; the callback sees (step, loss, lr) and may
  /// write checkpoints.
  void run(const std::function<void(std::size_t, double, double)>& on_step = {});

  nd::Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer moments, generator state and history.
  void resume(const std::filesystem::path& path);

 private:
  std::vector<const env::EnvironmentRecord*> envs_;
  TrainConfig config_;
  std::unique_ptr<CkmModel> model_;
  std::unique_ptr<nd::Adam> optimizer_;
  std::mt19937_64 rng_;
  std::vector<double> losses_;
  double last_lr_ = 0.0;
};

/// Mean of each consecutive window of `window` losses.
std::vector<double> running_loss(const std::vector<double>& losses, std::size_t window);

}  // namespace ckm::denoiser
