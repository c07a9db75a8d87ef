#include "ckm/baselines/regression.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ckm/common/byte_io.hpp"
#include "ckm/numerics/checkpoint.hpp"

namespace ckm::baselines {

void RegressionConfig::validate() const {
  auto fail = [](const std::string& m) { throw nd::ContractError("regression config: " + m); };
  if (side < 4 || side % 4) fail("side must be a positive multiple of 4");
  if (sources == 0) fail("sources must be positive");
  if (!(omega >= 0.0 && omega <= 1.0)) fail("omega must lie in [0, 1]");
  if (width == 0 || groups == 0 || width % groups) fail("groups must divide width");
  if (targets_per_step == 0) fail("targets_per_step must be positive");
  if (lr_min < 0.0 || lr_max < lr_min) fail("need 0 <= lr_min <= lr_max");
}

nlohmann::json RegressionConfig::to_json() const {
  return {{"side", side},         {"sources", sources},
          {"omega", omega},       {"width", width},
          {"groups", groups},     {"seed", seed},
          {"steps", steps},       {"targets_per_step", targets_per_step},
          {"lr_min", lr_min},     {"lr_max", lr_max},
          {"warmup_steps", warmup_steps}, {"grad_clip", grad_clip}};
}

RegressionConfig RegressionConfig::from_json(const nlohmann::json& j) {
  RegressionConfig c;
  c.side = j.value("side", c.side);
  c.sources = j.value("sources", c.sources);
  c.omega = j.value("omega", c.omega);
  c.width = j.value("width", c.width);
  c.groups = j.value("groups", c.groups);
  c.seed = j.value("seed", c.seed);
  c.steps = j.value("steps", c.steps);
  c.targets_per_step = j.value("targets_per_step", c.targets_per_step);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.validate();
  return c;
}

RegressionBaseline::RegressionBaseline(RegressionConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  nn::ParamFactory f(params_, seed);
  const std::size_t w = config_.width, g = config_.groups;
  enc1_ = nn::Conv2d::create(f, "enc1", config_.sources + 1, w);
  n1_ = nn::GroupNorm::create(f, "enc1.norm", w, g);
  enc2_ = nn::Conv2d::create(f, "enc2", w, 2 * w, 3, 2);
  n2_ = nn::GroupNorm::create(f, "enc2.norm", 2 * w, g);
  enc3_ = nn::Conv2d::create(f, "enc3", 2 * w, 2 * w, 3, 2);
  n3_ = nn::GroupNorm::create(f, "enc3.norm", 2 * w, g);
  mid_ = nn::Conv2d::create(f, "mid", 2 * w, 2 * w);
  nm_ = nn::GroupNorm::create(f, "mid.norm", 2 * w, g);
  dec2_ = nn::Conv2d::create(f, "dec2", 4 * w, 2 * w);
  nd2_ = nn::GroupNorm::create(f, "dec2.norm", 2 * w, g);
  dec1_ = nn::Conv2d::create(f, "dec1", 3 * w, w);
  nd1_ = nn::GroupNorm::create(f, "dec1.norm", w, g);
  out_ = nn::Conv2d::create(f, "out", w, 1);
}

nd::Tensor RegressionBaseline::block(const nn::Conv2d& conv, const nn::GroupNorm& norm,
                                     const nd::Tensor& x) const {
  return nd::silu(norm(conv(x)));
}

nd::Tensor RegressionBaseline::build_input(const std::vector<SourceCkm>& sources,
                                           const std::vector<env::BsLocation>& targets) const {
  if (sources.size() != config_.sources)
    throw nd::ContractError("regression baseline was built for " + std::to_string(config_.sources) +
                            " sources, got " + std::to_string(sources.size()));
  if (targets.empty()) throw nd::ContractError("at least one target location is required");
  const std::size_t side = config_.side, px = side * side, ch = config_.sources + 1;
  std::vector<std::vector<double>> blended;
  for (const auto& s : sources) {
    if (!s.ckm || s.ckm->side() != side)
      throw nd::ContractError("source CKM does not have side " + std::to_string(side));
    blended.push_back(modality_weighted_input(s.ckm->gray(), bs_location_map(s.location, side),
                                              config_.omega));
  }
  std::vector<double> v(targets.size() * ch * px);
  for (std::size_t n = 0; n < targets.size(); ++n) {
    double* dst = v.data() + n * ch * px;
    for (std::size_t i = 0; i < blended.size(); ++i) std::copy(blended[i].begin(), blended[i].end(), dst + i * px);
    const auto onehot = bs_location_map(targets[n], side);
    std::copy(onehot.begin(), onehot.end(), dst + blended.size() * px);
  }
  return nd::Tensor::from({targets.size(), ch, side, side}, std::move(v));
}

nd::Tensor RegressionBaseline::forward(const nd::Tensor& input) const {
  if (input.rank() != 4 || input.dim(1) != config_.sources + 1 || input.dim(2) != config_.side ||
      input.dim(3) != config_.side)
    throw nd::ContractError("regression input " + nd::shape_str(input.shape()) + " does not match " +
                            std::to_string(config_.sources) + " sources at side " +
                            std::to_string(config_.side));
  const auto e1 = block(enc1_, n1_, input);
  const auto e2 = block(enc2_, n2_, e1);
  const auto e3 = block(enc3_, n3_, e2);
  const auto m = e3 + block(mid_, nm_, e3);
  const auto d2 = block(dec2_, nd2_, nd::concat({nd::upsample_nearest2x(m), e2}, 1));
  const auto d1 = block(dec1_, nd1_, nd::concat({nd::upsample_nearest2x(d2), e1}, 1));
  // Centred on mid-gray so an untrained network starts from a sensible level.
  return nd::add_scalar(out_(d1), 0.5);
}

std::vector<env::Ckm> RegressionBaseline::predict(const std::vector<SourceCkm>& sources,
                                                  const std::vector<env::BsLocation>& targets) const {
  nd::NoGradGuard no_grad;
  const auto y = forward(build_input(sources, targets));
  const std::size_t px = config_.side * config_.side;
  std::vector<std::uint8_t> mask(px, 0);
  for (const auto& s : sources)
    for (std::size_t k = 0; k < px; ++k) mask[k] |= s.ckm->mask()[k];
  std::vector<env::Ckm> out;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    std::vector<double> g(y.data().begin() + n * px, y.data().begin() + (n + 1) * px);
    for (auto& v : g) v = std::clamp(v, 0.0, 1.0);
    out.push_back(env::Ckm::from_gray(config_.side, std::move(g), mask, targets[n],
                                      sources.front().ckm->env_ref()));
  }
  return out;
}

void RegressionBaseline::save(const std::filesystem::path& path) const {
  nd::Checkpoint ckpt;
  ckpt.meta["kind"] = "regression-baseline";
  ckpt.meta["config"] = config_.to_json();
  nd::store_params(ckpt, params_, "regression/");
  nd::save_checkpoint(path, ckpt);
}

std::unique_ptr<RegressionBaseline> RegressionBaseline::load(const std::filesystem::path& path) {
  const auto ckpt = nd::load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "regression-baseline")
    throw io::FormatError(path.string() + " is not a regression-baseline checkpoint");
  auto m = std::make_unique<RegressionBaseline>(RegressionConfig::from_json(ckpt.meta.at("config")), 0);
  nd::restore_params(ckpt, m->params_, "regression/");
  return m;
}

RegressionResult train_regression_baseline(
    const std::vector<const env::EnvironmentRecord*>& environments, const RegressionConfig& config,
    const std::function<void(std::size_t, double)>& on_step) {
  config.validate();
  if (environments.empty()) throw std::runtime_error("no training environments");
  const std::size_t need = config.sources + config.targets_per_step;
  for (const auto* e : environments)
    if (e->ckms.size() < need)
      throw std::runtime_error(e->id + " has " + std::to_string(e->ckms.size()) + " BSs, need " +
                               std::to_string(need));

  RegressionResult result;
  result.model = std::make_unique<RegressionBaseline>(config, config.seed);
  auto& model = *result.model;
  nd::AdamConfig adam;
  adam.grad_clip = config.grad_clip;
  adam.schedule = {config.lr_min, config.lr_max, config.warmup_steps, config.steps};
  nd::Adam opt(model.params(), adam);
  std::mt19937_64 rng(config.seed);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto& rec = *environments[rng() % environments.size()];
    std::vector<std::size_t> order(rec.ckms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < need; ++i) std::swap(order[i], order[i + rng() % (order.size() - i)]);

    std::vector<SourceCkm> sources;
    for (std::size_t i = 0; i < config.sources; ++i)
      sources.push_back({&rec.ckms[order[i]], rec.ckms[order[i]].owner()});
    std::vector<env::BsLocation> targets;
    std::vector<double> truth;
    for (std::size_t i = config.sources; i < need; ++i) {
      targets.push_back(rec.ckms[order[i]].owner());
      truth.insert(truth.end(), rec.ckms[order[i]].gray().begin(), rec.ckms[order[i]].gray().end());
    }
    model.params().zero_grad();
    const auto pred = model.forward(model.build_input(sources, targets));
    const auto loss = nd::mse(pred, nd::Tensor::from({targets.size(), 1, config.side, config.side}, truth));
    const double v = loss.item();
    if (!std::isfinite(v)) throw std::runtime_error("non-finite regression loss at step " + std::to_string(step));
    nd::backward(loss);
    opt.step();
    result.losses.push_back(v);
    if (on_step) on_step(step, v);
  }
  return result;
}

}  // namespace ckm::baselines
