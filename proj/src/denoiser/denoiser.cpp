#include "ckm/denoiser/denoiser.hpp"

namespace ckm::denoiser {

using nn::ParamFactory;
using nn::from_tokens;
using nn::timestep_features;
using nn::to_tokens;

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& m) { throw nd::ContractError("denoiser config: " + m); };
  if (side < 16 || side % 16) fail("side must be a positive multiple of 16");
  if (latent_side == 0 || side % latent_side) fail("latent side must divide the map side");
  if (levels != 1 && levels != 2) fail("levels must be 1 or 2");
  if (levels == 2 && latent_side % 2) fail("two levels need an even latent side");
  if (attn_channels % 4 || source_channels % 4) fail("attention widths must be multiples of 4");
  if (encoder_channels.size() != 3) fail("the source encoder takes exactly three inner widths");
  if (time_features % 2) fail("time feature count must be even");
  for (std::size_t c : {attn_channels, levels == 2 ? base_channels : attn_channels,
                        levels == 2 ? attn_channels + base_channels : attn_channels})
    if (groups == 0 || c % groups) fail("groups must divide every normalised width");
  if (timesteps == 0) fail("timesteps must be positive");
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"side", side},
          {"latent_channels", latent_channels},
          {"latent_side", latent_side},
          {"levels", levels},
          {"base_channels", base_channels},
          {"attn_channels", attn_channels},
          {"source_channels", source_channels},
          {"encoder_channels", encoder_channels},
          {"source_tokens_per_map", source_tokens_per_map()},
          {"time_features", time_features},
          {"time_dim", time_dim},
          {"groups", groups},
          {"coord_channels", coord_channels},
          {"timesteps", timesteps}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.side = j.value("side", c.side);
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.latent_side = j.value("latent_side", c.side / 4);
  c.levels = j.value("levels", c.levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.attn_channels = j.value("attn_channels", c.attn_channels);
  c.source_channels = j.value("source_channels", c.source_channels);
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.time_features = j.value("time_features", c.time_features);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.groups = j.value("groups", c.groups);
  c.coord_channels = j.value("coord_channels", c.coord_channels);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.validate();
  return c;
}

std::vector<bsle::PolarLocation> TokenBatch::row_locations() const {
  std::vector<bsle::PolarLocation> rows;
  rows.reserve(locations.size() * tokens_per_map);
  for (const auto& l : locations) rows.insert(rows.end(), tokens_per_map, l);
  return rows;
}

void TokenBatch::validate() const {
  if (locations.empty()) throw nd::ContractError("token batch has no BS");
  if (!data.defined() || data.rank() != 2 || data.dim(0) != locations.size() * tokens_per_map)
    throw nd::ContractError("token batch rows do not match " + std::to_string(locations.size()) +
                            " BSs x " + std::to_string(tokens_per_map) + " tokens");
  if (data.dim(1) % 4) throw nd::ContractError("token width must be a multiple of 4");
}

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  ParamFactory f(params_, seed);
  const std::size_t extra = c.coord_channels ? 2 : 0;

  std::size_t in = 1 + extra;
  for (std::size_t i = 0; i < 3; ++i) {
    encoder_.push_back(Conv2d::create(f, "tau.conv" + std::to_string(i), in, c.encoder_channels[i], 3, 2));
    in = c.encoder_channels[i];
  }
  encoder_.push_back(Conv2d::create(f, "tau.conv3", in, c.source_channels, 3, 2));
  encoder_norm_ = GroupNorm::create(f, "tau.norm", c.source_channels, 1);

  time1_ = Linear::create(f, "time.fc1", c.time_features, c.time_dim);
  time2_ = Linear::create(f, "time.fc2", c.time_dim, c.time_dim);

  const std::size_t outer = c.levels == 2 ? c.base_channels : c.attn_channels;
  in_conv_ = Conv2d::create(f, "in", c.latent_channels + extra, outer);
  if (c.levels == 2) {
    outer_down_ = ResBlock::create(f, "down.res", outer, outer, c.time_dim, c.groups);
    down_ = Conv2d::create(f, "down.conv", outer, c.attn_channels, 3, 2);
  }
  mid1_ = ResBlock::create(f, "mid.res1", c.attn_channels, c.attn_channels, c.time_dim, c.groups);
  self_attn_ = SelfAttention::create(f, "mid.self", c.attn_channels, c.groups);
  cross_attn_ = CrossAttention::create(f, "mid.cross", c.attn_channels, c.source_channels, c.groups);
  mid2_ = ResBlock::create(f, "mid.res2", c.attn_channels, c.attn_channels, c.time_dim, c.groups);
  if (c.levels == 2)
    outer_up_ = ResBlock::create(f, "up.res", c.attn_channels + outer, outer, c.time_dim, c.groups);
  out_norm_ = GroupNorm::create(f, "out.norm", outer, c.groups);
  out_conv_ = Conv2d::create(f, "out", outer, c.latent_channels, 3, 1, true);
}

nd::Tensor Denoiser::coords(std::size_t n, std::size_t side) const {
  std::vector<double> v(n * 2 * side * side);
  const double step = 2.0 / static_cast<double>(side);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t col = 0; col < side; ++col) {
        const std::size_t base = b * 2 * side * side;
        v[base + r * side + col] = -1.0 + (static_cast<double>(col) + 0.5) * step;
        v[base + side * side + r * side + col] = -1.0 + (static_cast<double>(r) + 0.5) * step;
      }
  return nd::Tensor::from({n, 2, side, side}, std::move(v));
}

TokenBatch Denoiser::encode_sources(const nd::Tensor& gray_maps,
                                    std::vector<bsle::PolarLocation> locations) const {
  const auto& c = config_;
  if (locations.empty()) throw nd::ContractError("at least one source CKM is required");
  if (gray_maps.rank() != 3 || gray_maps.dim(0) != locations.size() || gray_maps.dim(1) != c.side ||
      gray_maps.dim(2) != c.side)
    throw nd::ContractError("source maps " + nd::shape_str(gray_maps.shape()) + " do not match " +
                            std::to_string(locations.size()) + " locations at side " +
                            std::to_string(c.side));
  const std::size_t e = locations.size();
  auto x = nd::add_scalar(nd::reshape(gray_maps, {e, 1, c.side, c.side}) * 2.0, -1.0);
  if (c.coord_channels) x = nd::concat({x, coords(e, c.side)}, 1);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    x = encoder_[i](x);
    if (i + 1 < encoder_.size()) x = nd::silu(x);
  }
  TokenBatch out;
  out.origin = TokenOrigin::kSource;
  out.tokens_per_map = x.dim(2) * x.dim(3);
  out.data = encoder_norm_(to_tokens(x));
  out.locations = std::move(locations);
  return out;
}

nd::Tensor Denoiser::predict_noise(const nd::Tensor& z_t, std::size_t t, const TokenBatch& sources,
                                   const std::vector<bsle::PolarLocation>& targets,
                                   AttentionTrace* trace) const {
  const auto& c = config_;
  if (z_t.rank() != 4 || z_t.dim(1) != c.latent_channels || z_t.dim(2) != c.latent_side ||
      z_t.dim(3) != c.latent_side)
    throw nd::ContractError("latent batch " + nd::shape_str(z_t.shape()) + " is not [N, " +
                            std::to_string(c.latent_channels) + ", " + std::to_string(c.latent_side) +
                            ", " + std::to_string(c.latent_side) + "]");
  if (targets.empty() || targets.size() != z_t.dim(0))
    throw nd::ContractError(std::to_string(z_t.dim(0)) + " latent maps but " +
                            std::to_string(targets.size()) + " target locations");
  if (t < 1 || t > c.timesteps)
    throw nd::ContractError("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(c.timesteps) + "]");
  sources.validate();
  if (sources.origin != TokenOrigin::kSource) throw nd::ContractError("conditioning tokens must come from sources");

  const std::size_t n = targets.size();
  const auto temb = time2_(nd::silu(time1_(timestep_features(t, c.time_features))));

  auto x = c.coord_channels ? nd::concat({z_t, coords(n, c.latent_side)}, 1) : z_t;
  x = in_conv_(x);
  nd::Tensor skip;
  if (c.levels == 2) {
    skip = outer_down_(x, temb);
    x = down_(skip);
  }
  x = mid1_(x, temb);

  const std::size_t h = x.dim(2), w = x.dim(3);
  TokenBatch tx;
  tx.origin = TokenOrigin::kTarget;
  tx.tokens_per_map = h * w;
  tx.data = to_tokens(x);
  tx.locations = targets;
  const auto x_locs = tx.row_locations();

  AttentionTrace::Weights* self_w = nullptr;
  AttentionTrace::Weights* cross_w = nullptr;
  if (trace) {
    self_w = &trace->self.emplace_back();
    cross_w = &trace->cross.emplace_back();
  }
  auto tokens = self_attn_(tx.data, x_locs, self_w);
  tokens = cross_attn_(tokens, x_locs, sources.data, sources.row_locations(), cross_w);
  x = from_tokens(tokens, n, h, w);

  x = mid2_(x, temb);
  if (c.levels == 2) x = outer_up_(nd::concat({nd::upsample_nearest2x(x), skip}, 1), temb);
  return out_conv_(nd::silu(out_norm_(x)));
}

}  // namespace ckm::denoiser
