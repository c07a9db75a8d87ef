#include "ckm/denoiser/model.hpp"

#include <algorithm>
#include <cmath>

#include "ckm/common/byte_io.hpp"

namespace ckm::denoiser {

std::vector<bsle::PolarLocation> SourceSet::locations() const {
  std::vector<bsle::PolarLocation> out;
  for (const auto* c : ckms) out.push_back(bsle::PolarLocation::from_bs(c->owner(), c->side()));
  return out;
}

nd::Tensor SourceSet::gray_tensor() const {
  if (ckms.empty()) throw nd::ContractError("at least one source CKM is required");
  const std::size_t side = ckms.front()->side();
  std::vector<double> v;
  v.reserve(ckms.size() * side * side);
  for (const auto* c : ckms) {
    if (c->side() != side) throw nd::ContractError("source CKMs differ in size");
    v.insert(v.end(), c->gray().begin(), c->gray().end());
  }
  return nd::Tensor::from({ckms.size(), side, side}, std::move(v));
}

CkmModel::CkmModel(DenoiserConfig config, diffusion::NoiseSchedule schedule,
                   std::unique_ptr<diffusion::LatentCodec> codec, double latent_scale,
                   std::uint64_t seed)
    : schedule_(std::move(schedule)),
      codec_(std::move(codec)),
      latent_scale_(latent_scale),
      denoiser_(config, seed) {
  const auto& c = denoiser_.config();
  if (!codec_) throw nd::ContractError("model needs a latent codec");
  if (codec_->side() != c.side || codec_->channels() != c.latent_channels ||
      codec_->latent_side() != c.latent_side)
    throw nd::ContractError("codec latent " + nd::shape_str(codec_->latent_shape()) +
                            " does not match the denoiser configuration");
  if (schedule_.steps() != c.timesteps)
    throw nd::ContractError("schedule has " + std::to_string(schedule_.steps()) +
                            " steps, denoiser expects " + std::to_string(c.timesteps));
  if (!(latent_scale_ > 0.0) || !std::isfinite(latent_scale_))
    throw nd::ContractError("latent scale must be positive and finite");
}

nlohmann::json CkmModel::describe() const {
  return {{"kind", "ckm-model"},
          {"denoiser", denoiser_.config().to_json()},
          {"schedule", schedule_.to_json()},
          {"codec", codec_->describe()},
          {"latent_scale", latent_scale_},
          {"parameters", denoiser_.params().parameter_count()}};
}

void CkmModel::store(nd::Checkpoint& ckpt) const {
  ckpt.meta["model"] = describe();
  nd::store_params(ckpt, denoiser_.params(), "denoiser/");
}

std::unique_ptr<CkmModel> CkmModel::restore(const nd::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model")) throw io::FormatError("checkpoint holds no model description");
  const auto& m = ckpt.meta.at("model");
  auto model = std::make_unique<CkmModel>(
      DenoiserConfig::from_json(m.at("denoiser")),
      diffusion::NoiseSchedule::from_json(m.at("schedule")), diffusion::make_codec(m.at("codec")),
      m.at("latent_scale").get<double>(), 0);
  nd::restore_params(ckpt, model->denoiser_.params(), "denoiser/");
  return model;
}

void CkmModel::save(const std::filesystem::path& path, const nlohmann::json& extra_meta) const {
  nd::Checkpoint ckpt;
  if (extra_meta.is_object()) ckpt.meta = extra_meta;
  store(ckpt);
  nd::save_checkpoint(path, ckpt);
}

std::unique_ptr<CkmModel> CkmModel::load(const std::filesystem::path& path) {
  return restore(nd::load_checkpoint(path));
}

nd::Tensor CkmModel::encode(const std::vector<const std::vector<double>*>& grays) const {
  std::vector<std::vector<double>> maps;
  maps.reserve(grays.size());
  for (const auto* g : grays) {
    std::vector<double> x(g->size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * (*g)[i] - 1.0;
    maps.push_back(std::move(x));
  }
  return codec_->encode_batch(maps) * latent_scale_;
}

std::vector<std::vector<double>> CkmModel::decode(const nd::Tensor& latents) const {
  auto maps = codec_->decode_batch(latents * (1.0 / latent_scale_));
  for (auto& m : maps)
    for (auto& v : m) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
  return maps;
}

diffusion::X0Projection CkmModel::x0_projection() const {
  // Decode, clamp to the valid pixel range [-1, 1], re-encode.
  return [this](std::vector<double>& x0) {
    const std::size_t per = nd::numel(codec_->latent_shape());
    const double inv = 1.0 / latent_scale_;
    for (std::size_t off = 0; off < x0.size(); off += per) {
      std::vector<double> z(x0.begin() + off, x0.begin() + off + per);
      for (auto& v : z) v *= inv;
      auto px = codec_->decode(z);
      for (auto& v : px) v = std::clamp(v, -1.0, 1.0);
      const auto back = codec_->encode(px);
      for (std::size_t k = 0; k < per; ++k) x0[off + k] = back[k] * latent_scale_;
    }
  };
}

TokenBatch CkmModel::encode_sources(const SourceSet& sources) const {
  return denoiser_.encode_sources(sources.gray_tensor(), sources.locations());
}

std::vector<env::Ckm> CkmModel::infer(const SourceSet& sources,
                                      const std::vector<env::BsLocation>& targets,
                                      const diffusion::SamplerConfig& sampler) const {
  if (targets.empty()) throw nd::ContractError("at least one target location is required");
  nd::NoGradGuard no_grad;
  const auto tokens = encode_sources(sources);
  std::vector<bsle::PolarLocation> locs;
  for (const auto& t : targets) locs.push_back(bsle::PolarLocation::from_bs(t, side()));

  nd::Shape shape = codec_->latent_shape();
  shape.insert(shape.begin(), targets.size());
  const auto z0 = diffusion::sample(
      [&](const nd::Tensor& z, std::size_t t) { return denoiser_.predict_noise(z, t, tokens, locs); },
      shape, schedule_, sampler, sampler.clip_x0 ? x0_projection() : diffusion::X0Projection{});
  auto grays = decode(z0);

  std::vector<std::uint8_t> mask(side() * side(), 0);
  for (const auto* c : sources.ckms)
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] |= c->mask()[k];
  std::vector<env::Ckm> out;
  for (std::size_t i = 0; i < targets.size(); ++i)
    out.push_back(env::Ckm::from_gray(side(), std::move(grays[i]), mask, targets[i],
                                      sources.ckms.front()->env_ref()));
  return out;
}

double estimate_latent_scale(const diffusion::LatentCodec& codec,
                             const std::vector<const std::vector<double>*>& grays) {
  if (grays.empty()) throw nd::ContractError("latent scale needs at least one map");
  double s = 0.0;
  std::size_t n = 0;
  for (const auto* g : grays) {
    std::vector<double> x(g->size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * (*g)[i] - 1.0;
    for (double v : codec.encode(x)) {
      s += v * v;
      ++n;
    }
  }
  const double rms = std::sqrt(s / static_cast<double>(n));
  if (!(rms > 0.0)) throw nd::ContractError("latents are identically zero");
  return 1.0 / rms;
}

}  // namespace ckm::denoiser
