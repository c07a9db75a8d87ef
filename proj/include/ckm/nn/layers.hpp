#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ckm/bsle/bsle.hpp"
#include "ckm/numerics/ops.hpp"
#include "ckm/numerics/optim.hpp"

// Small parameterised building blocks. Each layer holds Tensor handles that
// alias entries of a ParamStore, so optimizer updates and checkpoint restores
// are seen by the layer without re-binding.

namespace ckm::nn {

class ParamFactory {
 public:
  ParamFactory(nd::ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  nd::Tensor normal(const std::string& name, nd::Shape shape, double stddev);
  nd::Tensor constant(const std::string& name, nd::Shape shape, double value);

 private:
  nd::ParamStore& store_;
  std::mt19937_64 rng_;
};

struct Linear {
  nd::Tensor w, b;  // w [in, out]; b [out] or undefined

  static Linear create(ParamFactory& f, const std::string& name, std::size_t in, std::size_t out,
                       bool bias = true, bool zero = false);
  nd::Tensor operator()(const nd::Tensor& x) const { return nd::linear(x, w, b); }
  std::size_t in() const { return w.dim(0); }
  std::size_t out() const { return w.dim(1); }
};

struct Conv2d {
  nd::Tensor w, b;
  std::size_t stride = 1, pad = 1;

  static Conv2d create(ParamFactory& f, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel = 3, std::size_t stride = 1, bool zero = false);
  nd::Tensor operator()(const nd::Tensor& x) const { return nd::conv2d(x, w, b, stride, pad); }
};

struct GroupNorm {
  std::size_t groups = 1;
  nd::Tensor gamma, beta;

  static GroupNorm create(ParamFactory& f, const std::string& name, std::size_t channels,
                          std::size_t groups);
  nd::Tensor operator()(const nd::Tensor& x) const {
    return nd::group_norm(x, groups, gamma, beta);
  }
};

/// GN -> SiLU -> conv -> + time bias -> GN -> SiLU -> conv, plus a 1x1
/// projection on the skip path when the channel count changes.
struct ResBlock {
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2, skip;
  Linear time_proj;
  bool has_skip = false;

  static ResBlock create(ParamFactory& f, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t time_dim, std::size_t groups);
  /// x [N, C, H, W]; temb [1, time_dim] shared by the whole batch.
  nd::Tensor operator()(const nd::Tensor& x, const nd::Tensor& temb) const;
};

/// Sinusoidal features of a scalar timestep: [sin(t w_k), cos(t w_k)],
/// w_k = 10000^(-k / (dim/2)). Returns [1, dim].
nd::Tensor timestep_features(std::size_t t, std::size_t dim);

/// [N, C, H, W] -> [N*H*W, C] (row = one spatial position of one map), and back.
nd::Tensor to_tokens(const nd::Tensor& x);
nd::Tensor from_tokens(const nd::Tensor& tokens, std::size_t n, std::size_t h, std::size_t w);

/// Attention weights recorded during a forward pass, one row-major matrix per block.
struct AttentionTrace {
  struct Weights {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
  };
  std::vector<Weights> self;
  std::vector<Weights> cross;
};

/// Target-target attention with BSLE-rotated queries and keys; tokens of all
/// target maps attend to each other.
struct SelfAttention {
  GroupNorm norm;
  Linear q, k, v, out;

  static SelfAttention create(ParamFactory& f, const std::string& name, std::size_t dim,
                              std::size_t groups);
  /// x [rows, C_X]; locs holds one location per row.
  nd::Tensor operator()(const nd::Tensor& x, const std::vector<bsle::PolarLocation>& locs,
                        AttentionTrace::Weights* trace = nullptr) const;
};

/// Target-source attention: queries from target tokens (C_X -> C_Y), keys and
/// values from source tokens, each side rotated by its own BS locations.
struct CrossAttention {
  GroupNorm norm;
  Linear q, k, v, out;

  static CrossAttention create(ParamFactory& f, const std::string& name, std::size_t dim_x,
                               std::size_t dim_y, std::size_t groups);
  nd::Tensor operator()(const nd::Tensor& x, const std::vector<bsle::PolarLocation>& x_locs,
                        const nd::Tensor& y, const std::vector<bsle::PolarLocation>& y_locs,
                        AttentionTrace::Weights* trace = nullptr) const;
};

}  // namespace ckm::nn
