#include "ckm/denoiser/train.hpp"

#include <cmath>
#include <sstream>

#include "ckm/common/byte_io.hpp"
#include "ckm/numerics/checkpoint.hpp"

namespace ckm::denoiser {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw nd::ContractError("train config: " + m); };
  if (steps == 0) fail("steps must be positive");
  if (sources_min == 0 || sources_max < sources_min) fail("need 1 <= sources_min <= sources_max");
  if (targets == 0) fail("targets must be positive");
  if (envs_per_step == 0) fail("envs_per_step must be positive");
  if (lr_min < 0.0 || lr_max < lr_min) fail("need 0 <= lr_min <= lr_max");
  if (latent_scale < 0.0) fail("latent_scale must be non-negative");
  if (timesteps != model.timesteps) fail("timesteps differ between schedule and model");
  model.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"seed", seed},
          {"steps", steps},
          {"sources_min", sources_min},
          {"sources_max", sources_max},
          {"targets", targets},
          {"envs_per_step", envs_per_step},
          {"lr_min", lr_min},
          {"lr_max", lr_max},
          {"warmup_steps", warmup_steps},
          {"grad_clip", grad_clip},
          {"checkpoint_every", checkpoint_every},
          {"timesteps", timesteps},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"latent_scale", latent_scale},
          {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.seed = j.value("seed", c.seed);
  c.steps = j.value("steps", c.steps);
  c.sources_min = j.value("sources_min", c.sources_min);
  c.sources_max = j.value("sources_max", c.sources_max);
  c.targets = j.value("targets", c.targets);
  c.envs_per_step = j.value("envs_per_step", c.envs_per_step);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
  c.latent_scale = j.value("latent_scale", c.latent_scale);
  if (j.contains("model")) c.model = DenoiserConfig::from_json(j.at("model"));
  c.model.timesteps = c.timesteps;
  c.validate();
  return c;
}

namespace {

std::size_t draw_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

}  // namespace

Trainer::Trainer(std::vector<const env::EnvironmentRecord*> environments, TrainConfig config)
    : envs_(std::move(environments)), config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  if (envs_.empty()) throw DatasetError("no training environments");
  const std::size_t need = config_.sources_max + config_.targets;
  for (const auto* e : envs_) {
    if (e->ckms.size() < need)
      throw DatasetError(e->id + " has " + std::to_string(e->ckms.size()) + " BSs; training with up to " +
                         std::to_string(config_.sources_max) + " sources and " +
                         std::to_string(config_.targets) + " targets needs " + std::to_string(need));
    if (e->map.side() != config_.model.side)
      throw DatasetError(e->id + " has side " + std::to_string(e->map.side()) + ", model expects " +
                         std::to_string(config_.model.side));
  }

  auto codec = std::make_unique<diffusion::PatchDctCodec>(config_.model.side,
                                                          config_.model.side / config_.model.latent_side);
  double scale = config_.latent_scale;
  if (scale == 0.0) {
    std::vector<const std::vector<double>*> maps;
    for (const auto* e : envs_)
      for (const auto& c : e->ckms) maps.push_back(&c.gray());
    scale = estimate_latent_scale(*codec, maps);
    config_.latent_scale = scale;
  }
  model_ = std::make_unique<CkmModel>(
      config_.model,
      diffusion::NoiseSchedule::linear(config_.timesteps, config_.beta_start, config_.beta_end),
      std::move(codec), scale, config_.seed);

  nd::AdamConfig adam;
  adam.grad_clip = config_.grad_clip;
  adam.schedule = {config_.lr_min, config_.lr_max, config_.warmup_steps, config_.steps};
  optimizer_ = std::make_unique<nd::Adam>(model_->denoiser().params(), adam);
}

TrainSample Trainer::draw_sample() {
  TrainSample s;
  s.env = draw_index(rng_, envs_.size());
  const std::size_t n_bs = envs_[s.env]->ckms.size();
  const std::size_t k =
      config_.sources_min + draw_index(rng_, config_.sources_max - config_.sources_min + 1);
  std::vector<std::size_t> order(n_bs);
  for (std::size_t i = 0; i < n_bs; ++i) order[i] = i;
  const std::size_t take = k + config_.targets;
  for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + draw_index(rng_, n_bs - i)]);
  s.sources.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  s.targets.assign(order.begin() + static_cast<std::ptrdiff_t>(k),
                   order.begin() + static_cast<std::ptrdiff_t>(take));
  s.t = 1 + draw_index(rng_, config_.timesteps);
  return s;
}

nd::Tensor Trainer::sample_loss(const TrainSample& s, std::mt19937_64& noise_rng) const {
  const auto& rec = *envs_.at(s.env);
  SourceSet sources;
  for (auto i : s.sources) sources.ckms.push_back(&rec.ckms.at(i));
  std::vector<const std::vector<double>*> grays;
  std::vector<bsle::PolarLocation> locs;
  for (auto i : s.targets) {
    grays.push_back(&rec.ckms.at(i).gray());
    locs.push_back(bsle::PolarLocation::from_bs(rec.ckms[i].owner(), rec.map.side()));
  }
  const auto x0 = model_->encode(grays);
  const auto noise = diffusion::standard_normal(x0.shape(), noise_rng);
  const auto z_t = diffusion::forward_jump(x0, s.t, noise, model_->schedule());
  const auto tokens = model_->encode_sources(sources);
  const auto eps_hat = model_->denoiser().predict_noise(z_t, s.t, tokens, locs);
  return diffusion::denoising_loss(noise, eps_hat);
}

double Trainer::train_step() {
  auto& params = model_->denoiser().params();
  params.zero_grad();
  double total = 0.0;
  for (std::size_t e = 0; e < config_.envs_per_step; ++e) {
    const auto s = draw_sample();
    auto loss = sample_loss(s, rng_);
    const double v = loss.item();
    if (!std::isfinite(v))
      throw NumericalError("non-finite loss at step " + std::to_string(step() + 1) + " (" +
                           envs_[s.env]->id + ", t=" + std::to_string(s.t) + ", " +
                           std::to_string(s.sources.size()) + " sources)");
    total += v;
    nd::backward(config_.envs_per_step > 1 ? loss * (1.0 / static_cast<double>(config_.envs_per_step))
                                           : loss);
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    for (double g : params.at(i).grad())
      if (!std::isfinite(g))
        throw NumericalError("non-finite gradient in " + params.name(i) + " at step " +
                             std::to_string(step() + 1));
  last_lr_ = optimizer_->step();
  const double mean = total / static_cast<double>(config_.envs_per_step);
  losses_.push_back(mean);
  return mean;
}

void Trainer::run(const std::function<void(std::size_t, double, double)>& on_step) {
  while (step() < config_.steps) {
    const double loss = train_step();
    if (on_step) on_step(step(), loss, last_lr_);
  }
}

nd::Checkpoint Trainer::checkpoint() const {
  nd::Checkpoint ckpt;
  model_->store(ckpt);
  nd::store_optimizer(ckpt, model_->denoiser().params(), optimizer_->state());
  std::ostringstream rng_state;
  rng_state << rng_;
  ckpt.meta["trainer"] = {{"step", step()}, {"rng", rng_state.str()}, {"config", config_.to_json()}};
  if (!losses_.empty()) ckpt.add("trainer/losses", {losses_.size()}, losses_);
  return ckpt;
}

void Trainer::save(const std::filesystem::path& path) const { nd::save_checkpoint(path, checkpoint()); }

void Trainer::resume(const std::filesystem::path& path) {
  const auto ckpt = nd::load_checkpoint(path);
  if (!ckpt.meta.contains("trainer")) throw io::FormatError(path.string() + " is not a training checkpoint");
  const auto& t = ckpt.meta.at("trainer");
  if (t.at("config").at("model") != config_.model.to_json())
    throw nd::ContractError("checkpoint model configuration differs from the training configuration");
  nd::restore_params(ckpt, model_->denoiser().params(), "denoiser/");
  nd::restore_optimizer(ckpt, model_->denoiser().params(), optimizer_->state());
  std::istringstream rng_state(t.at("rng").get<std::string>());
  rng_state >> rng_;
  losses_.clear();
  if (ckpt.contains("trainer/losses")) losses_ = ckpt.find("trainer/losses").values;
  if (optimizer_->state().step != t.at("step").get<std::size_t>())
    throw io::FormatError("checkpoint step counters disagree");
}

std::vector<double> running_loss(const std::vector<double>& losses, std::size_t window) {
  if (window == 0) throw nd::ContractError("window must be positive");
  std::vector<double> out;
  for (std::size_t i = 0; i + window <= losses.size(); i += window) {
    double s = 0.0;
    for (std::size_t k = 0; k < window; ++k) s += losses[i + k];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace ckm::denoiser
