#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ckm/bsle/bsle.hpp"
#include "ckm/nn/layers.hpp"
#include "ckm/numerics/optim.hpp"

// Noise-prediction network over latent CKMs of a set of target BSs,
// conditioned on tokens of a set of source CKMs. The target locations enter
// only through the rotary location encoding inside the attention blocks, so
// the network sees positions relative to the sources, never absolute ones.

namespace ckm::denoiser {

using nn::AttentionTrace;
using nn::Conv2d;
using nn::CrossAttention;
using nn::GroupNorm;
using nn::Linear;
using nn::ResBlock;
using nn::SelfAttention;

struct DenoiserConfig {
  std::size_t side = 64;             // pixel map side L
  std::size_t latent_channels = 16;  // latent is [C, L/4, L/4]
  std::size_t latent_side = 16;
  std::size_t levels = 2;            // 1: attention at latent resolution; 2: one down/up step
  std::size_t base_channels = 32;    // outer-level width when levels == 2
  std::size_t attn_channels = 64;    // C_X
  std::size_t source_channels = 64;  // C_Y
  std::vector<std::size_t> encoder_channels{16, 32, 64};  // first three source-encoder convs
  std::size_t time_features = 64;
  std::size_t time_dim = 128;
  std::size_t groups = 8;
  bool coord_channels = true;        // fixed (x, y) planes appended to both inputs
  std::size_t timesteps = 1000;

  /// Tokens per source map: (L/16)^2.
  std::size_t source_tokens_per_map() const { return (side / 16) * (side / 16); }
  void validate() const;
  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);
};

enum class TokenOrigin { kSource, kTarget };

/// Flattened tokens of a set of BS maps: row block i belongs to locations[i].
struct TokenBatch {
  TokenOrigin origin = TokenOrigin::kSource;
  std::size_t tokens_per_map = 0;
  nd::Tensor data;  // [bs_count * tokens_per_map, dim]
  std::vector<bsle::PolarLocation> locations;

  std::size_t bs_count() const { return locations.size(); }
  /// One location per token row.
  std::vector<bsle::PolarLocation> row_locations() const;
  void validate() const;
};

class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed);
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  const DenoiserConfig& config() const { return config_; }
  nd::ParamStore& params() { return params_; }
  const nd::ParamStore& params() const { return params_; }

  /// Source encoder: gray maps [E, L, L] (values in [0, 1]) -> E * (L/16)^2
  /// tokens of width C_Y. Throws ContractError on an empty set.
  TokenBatch encode_sources(const nd::Tensor& gray_maps,
                            std::vector<bsle::PolarLocation> locations) const;

  /// eps_hat for z_t [N_t, C, h, w] at timestep t given the source tokens and
  /// one location per target map. Output shape equals z_t's.
  nd::Tensor predict_noise(const nd::Tensor& z_t, std::size_t t, const TokenBatch& sources,
                           const std::vector<bsle::PolarLocation>& targets,
                           AttentionTrace* trace = nullptr) const;

 private:
  nd::Tensor coords(std::size_t n, std::size_t side) const;

  DenoiserConfig config_;
  nd::ParamStore params_;

  std::vector<Conv2d> encoder_;
  GroupNorm encoder_norm_;
  Linear time1_, time2_;
  Conv2d in_conv_;
  ResBlock outer_down_;
  Conv2d down_;
  ResBlock mid1_, mid2_;
  SelfAttention self_attn_;
  CrossAttention cross_attn_;
  ResBlock outer_up_;
  GroupNorm out_norm_;
  Conv2d out_conv_;
};

}  // namespace ckm::denoiser
