#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "ckm/numerics/optim.hpp"
#include "ckm/numerics/tensor.hpp"

// Latent codecs map an L x L map to a [C, L/p, L/p] latent by treating every
// p x p patch as a vector and projecting it on a per-patch basis.

namespace ckm::diffusion {

class LatentCodec {
 public:
  LatentCodec(std::size_t side, std::size_t patch, std::size_t channels);
  virtual ~LatentCodec() = default;

  std::size_t side() const { return side_; }
  std::size_t patch() const { return patch_; }
  std::size_t channels() const { return channels_; }
  std::size_t latent_side() const { return side_ / patch_; }
  nd::Shape latent_shape() const { return {channels_, latent_side(), latent_side()}; }

  std::vector<double> encode(std::span<const double> map) const;
  std::vector<double> decode(std::span<const double> latent) const;

  /// Maps -> [B, C, h, w] tensor, and back.
  nd::Tensor encode_batch(const std::vector<std::vector<double>>& maps) const;
  std::vector<std::vector<double>> decode_batch(const nd::Tensor& latents) const;

  virtual nlohmann::json describe() const = 0;

 protected:
  /// Row-major [channels, patch*patch] analysis and [patch*patch, channels] synthesis.
  virtual const std::vector<double>& analysis() const = 0;
  virtual const std::vector<double>& synthesis() const = 0;

 private:
  std::size_t side_, patch_, channels_;
};

/// Exact mode: orthonormal 2D DCT-II per patch, all p^2 coefficients kept.
/// Channel k1 * p + k2 holds frequency (k1, k2); channel 0 is the patch mean
/// scaled by p.
class PatchDctCodec final : public LatentCodec {
 public:
  explicit PatchDctCodec(std::size_t side, std::size_t patch = 4);
  nlohmann::json describe() const override;

 protected:
  const std::vector<double>& analysis() const override { return basis_; }
  const std::vector<double>& synthesis() const override { return basis_t_; }

 private:
  std::vector<double> basis_, basis_t_;
};

/// Learned linear patch autoencoder with `channels` <= p^2 latent channels,
/// initialised from the leading DCT rows and fitted by Adam on reconstruction.
class LearnedPatchCodec final : public LatentCodec {
 public:
  LearnedPatchCodec(std::size_t side, std::size_t patch, std::size_t channels);

  /// Returns the final mean squared reconstruction error.
  double fit(const std::vector<std::vector<double>>& maps, std::size_t steps, std::uint64_t seed,
             double lr = 1e-3);
  void load(const std::vector<double>& enc, const std::vector<double>& dec);
  nlohmann::json describe() const override;
  nd::ParamStore& params() { return params_; }

 protected:
  const std::vector<double>& analysis() const override { return enc_; }
  const std::vector<double>& synthesis() const override { return dec_; }

 private:
  void sync();
  nd::ParamStore params_;
  std::vector<double> enc_, dec_;
};

std::unique_ptr<LatentCodec> make_codec(const nlohmann::json& description);

}  // namespace ckm::diffusion
