#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ckm/numerics/ops.hpp"
#include "ckm/numerics/tensor.hpp"

// Central finite-difference oracle for reverse-mode gradients. The scalar
// probed is sum(f(inputs) * w) for a fixed random weighting w, so every output
// element contributes.

namespace ckm::testing {

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline nd::Tensor random_tensor(nd::Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                                double lo = -1.0, double hi = 1.0) {
  const auto n = nd::numel(shape);
  return nd::Tensor::from(std::move(shape), random_values(n, rng, lo, hi), requires_grad);
}

/// ||a - b|| / max(||a||, ||b||), with an absolute floor for all-zero gradients.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
  return std::sqrt(diff) / denom;
}

using TensorFn = std::function<nd::Tensor(const std::vector<nd::Tensor>&)>;

/// Largest relative error over all inputs flagged requires_grad.
inline double gradcheck(const TensorFn& f, std::vector<nd::Tensor> inputs, std::uint64_t seed = 7,
                        double h = 1e-6) {
  std::mt19937_64 rng(seed);
  const nd::Tensor probe_shape = f(inputs);
  const auto weights =
      nd::Tensor::from(probe_shape.shape(), random_values(probe_shape.size(), rng), false);

  auto scalar = [&](const std::vector<nd::Tensor>& in) {
    return nd::sum(nd::mul(f(in), weights));
  };

  for (auto& t : inputs)
    if (t.requires_grad()) t.zero_grad();
  nd::backward(scalar(inputs));

  double worst = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.size(), 0.0);
    std::vector<double> numeric(t.size());
    auto data = t.mutable_data();
    nd::NoGradGuard guard;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = scalar(inputs).item();
      data[i] = keep - h;
      const double down = scalar(inputs).item();
      data[i] = keep;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace ckm::testing
