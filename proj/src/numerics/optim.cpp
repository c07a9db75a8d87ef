#include "ckm/numerics/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ckm::nd {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("unknown parameter " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

double LrSchedule::at(std::size_t step) const {
  if (lr_min < 0.0 || lr_max < lr_min) throw ContractError("invalid learning-rate bounds");
  double lr;
  if (warmup_steps > 0 && step <= warmup_steps) {
    lr = lr_min + (lr_max - lr_min) * static_cast<double>(step) / static_cast<double>(warmup_steps);
  } else {
    const double span = total_steps > warmup_steps ? static_cast<double>(total_steps - warmup_steps)
                                                   : 1.0;
    const double progress =
        std::clamp(static_cast<double>(step - std::min(step, warmup_steps)) / span, 0.0, 1.0);
    lr = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return std::clamp(lr, lr_min, lr_max);
}

Adam::Adam(ParamStore& params, AdamConfig config) : params_(params), config_(config) {
  state_.m.resize(params_.size());
  state_.v.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    state_.m[i].assign(params_.at(i).size(), 0.0);
    state_.v[i].assign(params_.at(i).size(), 0.0);
  }
}

double Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_.at(i).has_grad()) {
      throw ContractError("parameter " + params_.name(i) + " has no gradient");
    }
    if (state_.m[i].size() != params_.at(i).size()) {
      throw ContractError("optimizer moments do not match parameter " + params_.name(i));
    }
  }
  double clip = 1.0;
  if (config_.grad_clip > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i)
      for (double g : params_.at(i).grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) clip = config_.grad_clip / norm;
  }
  ++state_.step;
  const double lr = config_.schedule.at(state_.step);
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_.at(i).mutable_data();
    auto g = params_.at(i).grad();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
  return lr;
}

}  // namespace ckm::nd
