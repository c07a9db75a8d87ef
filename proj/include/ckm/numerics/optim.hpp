#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ckm/numerics/tensor.hpp"

namespace ckm::nd {

/// Ordered set of named trainable leaves. Order is the registration order and
/// is what checkpoints and optimizer state are aligned to.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& at(std::size_t i) { return entries_[i].second; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  std::size_t parameter_count() const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Linear warm-up from lr_min to lr_max, then cosine annealing back to lr_min.
struct LrSchedule {
  double lr_min = 1e-5;
  double lr_max = 1e-4;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 2000;

  /// Learning rate used for the given 1-based step number.
  double at(std::size_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  LrSchedule schedule;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

class Adam {
 public:
  Adam(ParamStore& params, AdamConfig config);

  /// Applies one update from the accumulated gradients. Throws ContractError
  /// when a parameter has no gradient. Returns the learning rate used.
  double step();

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  const AdamConfig& config() const { return config_; }

 private:
  ParamStore& params_;
  AdamConfig config_;
  OptimizerState state_;
};

}  // namespace ckm::nd
