#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "ckm/denoiser/denoiser.hpp"
#include "ckm/diffusion/codec.hpp"
#include "ckm/diffusion/sampler.hpp"
#include "ckm/diffusion/schedule.hpp"
#include "ckm/env/ckm_map.hpp"
#include "ckm/numerics/checkpoint.hpp"

// Everything needed to turn source CKMs into target CKMs: codec, noise
// schedule, latent scaling and the noise-prediction network.
//
// Latent of a gray map g: z = latent_scale * codec(2 g - 1).

namespace ckm::denoiser {

struct SourceSet {
  std::vector<const env::Ckm*> ckms;

  std::vector<bsle::PolarLocation> locations() const;
  /// [E, L, L] gray maps.
  nd::Tensor gray_tensor() const;
};

class CkmModel {
 public:
  CkmModel(DenoiserConfig config, diffusion::NoiseSchedule schedule,
           std::unique_ptr<diffusion::LatentCodec> codec, double latent_scale, std::uint64_t seed);

  static std::unique_ptr<CkmModel> load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path, const nlohmann::json& extra_meta = {}) const;
  /// Parameter and model-description arrays/meta, for embedding in a training checkpoint.
  void store(nd::Checkpoint& ckpt) const;
  static std::unique_ptr<CkmModel> restore(const nd::Checkpoint& ckpt);

  Denoiser& denoiser() { return denoiser_; }
  const Denoiser& denoiser() const { return denoiser_; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }
  const diffusion::LatentCodec& codec() const { return *codec_; }
  double latent_scale() const { return latent_scale_; }
  std::size_t side() const { return denoiser_.config().side; }
  nlohmann::json describe() const;

  /// Gray maps -> scaled latents [N, C, h, w].
  nd::Tensor encode(const std::vector<const std::vector<double>*>& grays) const;
  /// Scaled latents -> gray maps clamped to [0, 1].
  std::vector<std::vector<double>> decode(const nd::Tensor& latents) const;

  TokenBatch encode_sources(const SourceSet& sources) const;
  /// Clamps an x0 estimate to valid maps: decode, clip to [-1, 1], re-encode.
  diffusion::X0Projection x0_projection() const;

  /// Generates one CKM per target location in a single reverse chain. The
  /// returned maps carry the union of the source building masks.
  std::vector<env::Ckm> infer(const SourceSet& sources, const std::vector<env::BsLocation>& targets,
                              const diffusion::SamplerConfig& sampler) const;

 private:
  diffusion::NoiseSchedule schedule_;
  std::unique_ptr<diffusion::LatentCodec> codec_;
  double latent_scale_;
  Denoiser denoiser_;
};

/// 1 / (RMS of codec(2 g - 1)) over the given maps: the factor that brings
/// latents to roughly unit scale.
double estimate_latent_scale(const diffusion::LatentCodec& codec,
                             const std::vector<const std::vector<double>*>& grays);

}  // namespace ckm::denoiser
