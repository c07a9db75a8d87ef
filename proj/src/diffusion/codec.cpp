#include "ckm/diffusion/codec.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ckm/numerics/ops.hpp"

namespace ckm::diffusion {

LatentCodec::LatentCodec(std::size_t side, std::size_t patch, std::size_t channels)
    : side_(side), patch_(patch), channels_(channels) {
  if (patch == 0 || side % patch != 0) {
    throw nd::ContractError("map side " + std::to_string(side) + " is not divisible by patch " +
                            std::to_string(patch));
  }
  if (channels == 0 || channels > patch * patch)
    throw nd::ContractError("latent channels must lie in [1, patch^2]");
}

std::vector<double> LatentCodec::encode(std::span<const double> map) const {
  if (map.size() != side_ * side_) {
    throw nd::ContractError("encode expects " + std::to_string(side_ * side_) + " values, got " +
                            std::to_string(map.size()));
  }
  const std::size_t p = patch_, h = latent_side(), pp = p * p;
  const auto& a = analysis();
  std::vector<double> out(channels_ * h * h, 0.0);
  std::vector<double> buf(pp);
  for (std::size_t by = 0; by < h; ++by) {
    for (std::size_t bx = 0; bx < h; ++bx) {
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) buf[i * p + j] = map[(by * p + i) * side_ + bx * p + j];
      for (std::size_t c = 0; c < channels_; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < pp; ++k) s += a[c * pp + k] * buf[k];
        out[(c * h + by) * h + bx] = s;
      }
    }
  }
  return out;
}

std::vector<double> LatentCodec::decode(std::span<const double> latent) const {
  const std::size_t p = patch_, h = latent_side(), pp = p * p;
  if (latent.size() != channels_ * h * h) {
    throw nd::ContractError("decode expects " + std::to_string(channels_ * h * h) +
                            " values, got " + std::to_string(latent.size()));
  }
  const auto& s = synthesis();
  std::vector<double> out(side_ * side_, 0.0);
  for (std::size_t by = 0; by < h; ++by) {
    for (std::size_t bx = 0; bx < h; ++bx) {
      for (std::size_t k = 0; k < pp; ++k) {
        double v = 0.0;
        for (std::size_t c = 0; c < channels_; ++c) v += s[k * channels_ + c] * latent[(c * h + by) * h + bx];
        out[(by * p + k / p) * side_ + bx * p + k % p] = v;
      }
    }
  }
  return out;
}

nd::Tensor LatentCodec::encode_batch(const std::vector<std::vector<double>>& maps) const {
  std::vector<double> data;
  data.reserve(maps.size() * channels_ * latent_side() * latent_side());
  for (const auto& m : maps) {
    const auto z = encode(m);
    data.insert(data.end(), z.begin(), z.end());
  }
  return nd::Tensor::from({maps.size(), channels_, latent_side(), latent_side()}, std::move(data));
}

std::vector<std::vector<double>> LatentCodec::decode_batch(const nd::Tensor& latents) const {
  const nd::Shape want{channels_, latent_side(), latent_side()};
  if (latents.rank() != 4 || nd::Shape(latents.shape().begin() + 1, latents.shape().end()) != want) {
    throw nd::ShapeError("decode_batch expects [B, " + std::to_string(channels_) + ", " +
                         std::to_string(latent_side()) + ", " + std::to_string(latent_side()) +
                         "], got " + nd::shape_str(latents.shape()));
  }
  const std::size_t per = nd::numel(want);
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < latents.shape()[0]; ++b)
    out.push_back(decode(latents.data().subspan(b * per, per)));
  return out;
}

PatchDctCodec::PatchDctCodec(std::size_t side, std::size_t patch)
    : LatentCodec(side, patch, patch * patch) {
  const std::size_t p = patch, pp = p * p;
  std::vector<double> c1(p * p);
  for (std::size_t k = 0; k < p; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(p));
    for (std::size_t n = 0; n < p; ++n)
      c1[k * p + n] = scale * std::cos(std::numbers::pi * (2.0 * n + 1.0) * k / (2.0 * p));
  }
  basis_.assign(pp * pp, 0.0);
  basis_t_.assign(pp * pp, 0.0);
  for (std::size_t k1 = 0; k1 < p; ++k1)
    for (std::size_t k2 = 0; k2 < p; ++k2)
      for (std::size_t n1 = 0; n1 < p; ++n1)
        for (std::size_t n2 = 0; n2 < p; ++n2) {
          const double v = c1[k1 * p + n1] * c1[k2 * p + n2];
          basis_[(k1 * p + k2) * pp + n1 * p + n2] = v;
          basis_t_[(n1 * p + n2) * pp + k1 * p + k2] = v;
        }
}

nlohmann::json PatchDctCodec::describe() const {
  return {{"mode", "exact-orthonormal"}, {"side", side()}, {"patch", patch()}};
}

LearnedPatchCodec::LearnedPatchCodec(std::size_t side, std::size_t patch, std::size_t channels)
    : LatentCodec(side, patch, channels) {
  const PatchDctCodec dct(side, patch);
  const std::size_t pp = patch * patch;
  // Initialise from the leading DCT rows so an untrained codec is already a
  // sensible low-pass projection.
  std::vector<double> enc(channels * pp), dec(pp * channels);
  std::vector<double> unit(side * side, 0.0);
  for (std::size_t k = 0; k < pp; ++k) {
    std::fill(unit.begin(), unit.end(), 0.0);
    unit[(k / patch) * side + k % patch] = 1.0;
    const auto z = dct.encode(unit);
    const std::size_t h = side / patch;
    for (std::size_t c = 0; c < channels; ++c) {
      enc[c * pp + k] = z[c * h * h];
      dec[k * channels + c] = z[c * h * h];
    }
  }
  params_.add("codec/enc", nd::Tensor::from({channels, pp}, enc, true));
  params_.add("codec/dec", nd::Tensor::from({pp, channels}, dec, true));
  sync();
}

void LearnedPatchCodec::sync() {
  const auto& e = params_.get("codec/enc");
  const auto& d = params_.get("codec/dec");
  enc_.assign(e.data().begin(), e.data().end());
  dec_.assign(d.data().begin(), d.data().end());
}

double LearnedPatchCodec::fit(const std::vector<std::vector<double>>& maps, std::size_t steps,
                              std::uint64_t seed, double lr) {
  if (maps.empty()) throw nd::ContractError("codec fit needs at least one map");
  const std::size_t p = patch(), pp = p * p, h = latent_side();
  std::vector<double> patches;
  for (const auto& m : maps) {
    if (m.size() != side() * side()) throw nd::ContractError("codec fit: map of wrong size");
    for (std::size_t by = 0; by < h; ++by)
      for (std::size_t bx = 0; bx < h; ++bx)
        for (std::size_t k = 0; k < pp; ++k) patches.push_back(m[(by * p + k / p) * side() + bx * p + k % p]);
  }
  const std::size_t count = patches.size() / pp;
  const std::size_t batch = std::min<std::size_t>(count, 256);
  std::mt19937_64 rng(seed);

  nd::AdamConfig cfg;
  cfg.schedule.lr_min = lr;
  cfg.schedule.lr_max = lr;
  cfg.schedule.warmup_steps = 0;
  cfg.schedule.total_steps = std::max<std::size_t>(steps, 1);
  nd::Adam adam(params_, cfg);
  double last = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<double> xb(batch * pp);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t idx = rng() % count;
      std::copy_n(patches.begin() + idx * pp, pp, xb.begin() + b * pp);
    }
    const auto x = nd::Tensor::from({batch, pp}, xb);
    params_.zero_grad();
    const auto z = nd::matmul(x, nd::transpose(params_.get("codec/enc")));
    const auto y = nd::matmul(z, nd::transpose(params_.get("codec/dec")));
    const auto loss = nd::mse(y, x);
    nd::backward(loss);
    adam.step();
    last = loss.item();
  }
  sync();
  return last;
}

void LearnedPatchCodec::load(const std::vector<double>& enc, const std::vector<double>& dec) {
  auto e = params_.at(0).mutable_data();
  auto d = params_.at(1).mutable_data();
  if (enc.size() != e.size() || dec.size() != d.size())
    throw nd::ShapeError("learned codec weights do not match its geometry");
  std::copy(enc.begin(), enc.end(), e.begin());
  std::copy(dec.begin(), dec.end(), d.begin());
  sync();
}

nlohmann::json LearnedPatchCodec::describe() const {
  return {{"mode", "learned"},
          {"side", side()},
          {"patch", patch()},
          {"channels", channels()},
          {"enc", enc_},
          {"dec", dec_}};
}

std::unique_ptr<LatentCodec> make_codec(const nlohmann::json& d) {
  const auto mode = d.at("mode").get<std::string>();
  const auto side = d.at("side").get<std::size_t>();
  const auto patch = d.at("patch").get<std::size_t>();
  if (mode == "exact-orthonormal") return std::make_unique<PatchDctCodec>(side, patch);
  if (mode == "learned") {
    auto c = std::make_unique<LearnedPatchCodec>(side, patch, d.at("channels").get<std::size_t>());
    c->load(d.at("enc").get<std::vector<double>>(), d.at("dec").get<std::vector<double>>());
    return c;
  }
  throw std::invalid_argument("unknown codec mode " + mode);
}

}  // namespace ckm::diffusion
