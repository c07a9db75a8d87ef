#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <json.hpp>

#include "ckm/baselines/distance.hpp"
#include "ckm/env/dataset.hpp"
#include "ckm/nn/layers.hpp"
#include "ckm/numerics/optim.hpp"

// Direct-regression comparison scheme: a small convolutional encoder/decoder
// fed with one modality-blended channel per source BS plus a one-hot channel
// for the target BS. The number of sources is fixed when the network is built.

namespace ckm::baselines {

struct RegressionConfig {
  std::size_t side = 64;
  std::size_t sources = 5;  // fixed |I_e|
  double omega = 0.5;
  std::size_t width = 16;
  std::size_t groups = 4;
  // training
  std::uint64_t seed = 1;
  std::size_t steps = 2000;
  std::size_t targets_per_step = 4;
  double lr_min = 1e-4;
  double lr_max = 1e-3;
  std::size_t warmup_steps = 50;
  double grad_clip = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static RegressionConfig from_json(const nlohmann::json& j);
};

class RegressionBaseline {
 public:
  RegressionBaseline(RegressionConfig config, std::uint64_t seed);
  RegressionBaseline(const RegressionBaseline&) = delete;
  RegressionBaseline& operator=(const RegressionBaseline&) = delete;

  const RegressionConfig& config() const { return config_; }
  nd::ParamStore& params() { return params_; }
  const nd::ParamStore& params() const { return params_; }

  /// [N, sources + 1, L, L]: blended source channels in the given order, then
  /// the target one-hot. Throws ContractError when the source count differs
  /// from the build-time arity.
  nd::Tensor build_input(const std::vector<SourceCkm>& sources,
                         const std::vector<env::BsLocation>& targets) const;
  /// [N, 1, L, L] gray prediction.
  nd::Tensor forward(const nd::Tensor& input) const;
  std::vector<env::Ckm> predict(const std::vector<SourceCkm>& sources,
                                const std::vector<env::BsLocation>& targets) const;

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<RegressionBaseline> load(const std::filesystem::path& path);

 private:
  nd::Tensor block(const nn::Conv2d& conv, const nn::GroupNorm& norm, const nd::Tensor& x) const;

  RegressionConfig config_;
  nd::ParamStore params_;
  nn::Conv2d enc1_, enc2_, enc3_, mid_, dec2_, dec1_, out_;
  nn::GroupNorm n1_, n2_, n3_, nm_, nd2_, nd1_;
};

struct RegressionResult {
  std::unique_ptr<RegressionBaseline> model;
  std::vector<double> losses;
};

/// Trains on the given environments; every step draws one environment, the
/// fixed number of sources and `targets_per_step` disjoint targets, and
/// minimises the per-cell squared error. Deterministic per seed.
RegressionResult train_regression_baseline(
    const std::vector<const env::EnvironmentRecord*>& environments, const RegressionConfig& config,
    const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace ckm::baselines
