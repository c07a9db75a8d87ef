#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ckm/diffusion/codec.hpp"
#include "ckm/diffusion/sampler.hpp"
#include "ckm/diffusion/schedule.hpp"
#include "support/gradcheck.hpp"

using namespace ckm;
using namespace ckm::diffusion;

namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size() - 1);
  return m;
}

// True when the sample moments agree with (mean, var) within 3 standard errors.
bool within_3se(const Moments& m, double mean, double var, std::size_t n) {
  const double se_mean = std::sqrt(var / static_cast<double>(n));
  const double se_var = var * std::sqrt(2.0 / static_cast<double>(n - 1));
  return std::abs(m.mean - mean) <= 3.0 * se_mean && std::abs(m.var - var) <= 3.0 * se_var;
}

}  // namespace

TEST_CASE("linear schedule invariants") {
  const auto s = NoiseSchedule::linear();
  CHECK(s.steps() == 1000);
  CHECK_NOTHROW(s.validate());
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(0.02));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1000) < 1e-3);
  CHECK(s.posterior_variance(1) == 0.0);
  for (std::size_t t = 2; t <= 1000; t += 97) {
    const double expect = (1 - s.alpha(t)) * (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t));
    CHECK(s.posterior_variance(t) == expect);
  }
  CHECK_THROWS_AS(s.beta(0), nd::ContractError);
  CHECK_THROWS_AS(s.posterior_variance(1001), nd::ContractError);
  CHECK_THROWS_AS(NoiseSchedule({0.5, 1.0}), nd::ContractError);
  const auto back = NoiseSchedule::from_json(s.to_json());
  CHECK(back.alpha_bar(700) == s.alpha_bar(700));
}

TEST_CASE("forward step and jump examples") {
  const std::vector<double> x{1.0, -2.0, 0.5};
  const std::vector<double> zero(3, 0.0);
  const NoiseSchedule half({0.5});
  const auto y = forward_step(x, 1, zero, half);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(std::sqrt(0.5) * x[i]));
  const auto j = forward_jump(x, 1, zero, half);
  for (std::size_t i = 0; i < 3; ++i) CHECK(j[i] == doctest::Approx(std::sqrt(0.5) * x[i]));

  const NoiseSchedule tiny({1e-300});
  const std::vector<double> noise{0.3, 0.1, -0.7};
  CHECK(forward_step(x, 1, noise, tiny) == x);
  CHECK(forward_jump(x, 1, noise, tiny) == x);

  const auto s = NoiseSchedule::linear();
  CHECK_THROWS_AS(forward_step(x, 0, zero, s), nd::ContractError);
  CHECK_THROWS_AS(forward_jump(x, 1001, zero, s), nd::ContractError);
  CHECK_THROWS_AS(forward_jump(x, 3, std::vector<double>(2), s), nd::ContractError);
}

TEST_CASE("single step matches its Gaussian law") {
  const auto s = NoiseSchedule::linear();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t trials = 10000;
  const double x_prev = 0.8;
  for (std::size_t t : {1, 500, 1000}) {
    std::vector<double> out(trials);
    for (auto& o : out) {
      const double e = n(rng);
      o = forward_step(std::vector<double>{x_prev}, t, std::vector<double>{e}, s)[0];
    }
    CHECK(within_3se(moments(out), std::sqrt(1 - s.beta(t)) * x_prev, s.beta(t), trials));
  }
}

TEST_CASE("iterated steps and the closed-form jump agree in distribution") {
  const auto s = NoiseSchedule::linear();
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t trials = 10000;
  const double x0 = 0.6;
  for (std::size_t t : {1, 500, 1000}) {
    std::vector<double> chain(trials), jump(trials);
    for (std::size_t k = 0; k < trials; ++k) {
      double x = x0;
      for (std::size_t u = 1; u <= t; ++u) x = std::sqrt(1 - s.beta(u)) * x + std::sqrt(s.beta(u)) * n(rng);
      chain[k] = x;
      jump[k] = forward_jump(std::vector<double>{x0}, t, std::vector<double>{n(rng)}, s)[0];
    }
    const double mean = std::sqrt(s.alpha_bar(t)) * x0, var = 1 - s.alpha_bar(t);
    CHECK(within_3se(moments(chain), mean, var, trials));
    CHECK(within_3se(moments(jump), mean, var, trials));
  }
}

TEST_CASE("posterior mean identities") {
  const auto s = NoiseSchedule::linear();
  std::mt19937_64 rng(7);
  const auto x0 = testing::random_values(64, rng);
  const auto eps = testing::random_values(64, rng, -2, 2);
  const auto x1 = forward_jump(x0, 1, eps, s);
  const auto post = posterior_stats(x1, eps, 1, s);
  double worst = 0.0;
  for (std::size_t i = 0; i < 64; ++i) worst = std::max(worst, std::abs(post.mean[i] - x0[i]));
  CHECK(worst <= 1e-8);
  CHECK(post.variance == 0.0);

  const auto xt = forward_jump(x0, 300, eps, s);
  const auto zero = posterior_stats(xt, std::vector<double>(64, 0.0), 300, s);
  for (std::size_t i = 0; i < 64; ++i) CHECK(zero.mean[i] == doctest::Approx(xt[i] / std::sqrt(s.alpha(300))));
  CHECK_THROWS_AS(posterior_stats(xt, eps, 0, s), nd::ContractError);
}

TEST_CASE("denoising loss") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> eps(10000);
  for (auto& e : eps) e = n(rng);
  CHECK(denoising_loss(eps, eps) == 0.0);
  CHECK(denoising_loss(eps, std::vector<double>(eps.size(), 0.0)) == doctest::Approx(1.0).epsilon(0.05));
  const auto hat = testing::random_values(eps.size(), rng);
  std::vector<double> ae(eps), ah(hat);
  for (auto& v : ae) v *= 3.0;
  for (auto& v : ah) v *= 3.0;
  CHECK(denoising_loss(ae, ah) == doctest::Approx(9.0 * denoising_loss(eps, hat)).epsilon(1e-12));
  CHECK_THROWS_AS(denoising_loss(eps, std::vector<double>(3)), nd::ContractError);
  CHECK_THROWS_AS(denoising_loss(nd::Tensor::zeros({2, 3}), nd::Tensor::zeros({3, 2})),
                  nd::ContractError);
  CHECK(denoising_loss(nd::Tensor::from({3}, {1, 2, 3}), nd::Tensor::from({3}, {1, 2, 5})).item() ==
        doctest::Approx(4.0 / 3.0));
}

TEST_CASE("orthonormal patch codec") {
  const PatchDctCodec codec(64, 4);
  CHECK(codec.latent_shape() == nd::Shape{16, 16, 16});
  std::mt19937_64 rng(9);
  double worst_inv = 0.0, worst_norm = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = testing::random_values(64 * 64, rng, 0.0, 1.0);
    const auto z = codec.encode(x);
    const auto back = codec.decode(z);
    double nx = 0.0, nz = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      worst_inv = std::max(worst_inv, std::abs(back[i] - x[i]));
      nx += x[i] * x[i];
      nz += z[i] * z[i];
    }
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(nx) - std::sqrt(nz)));
  }
  CHECK(worst_inv <= 1e-12);
  CHECK(worst_norm <= 1e-12);

  const auto z = codec.encode(std::vector<double>(64 * 64, 0.25));
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t k = 0; k < 256; ++k) {
      if (c == 0) CHECK(z[k] == doctest::Approx(1.0));  // 4 * mean
      else CHECK(std::abs(z[c * 256 + k]) <= 1e-15);
    }
  CHECK_THROWS_AS(PatchDctCodec(30, 4), nd::ContractError);
  CHECK_THROWS_AS(codec.encode(std::vector<double>(10)), nd::ContractError);

  const auto batch = codec.encode_batch({std::vector<double>(4096, 0.1), std::vector<double>(4096, 0.9)});
  CHECK(batch.shape() == nd::Shape{2, 16, 16, 16});
  const auto maps = codec.decode_batch(batch);
  CHECK(maps[1][77] == doctest::Approx(0.9));
  CHECK(make_codec(codec.describe())->encode(maps[0]) == codec.encode(maps[0]));
}

TEST_CASE("learned patch codec fits and serialises") {
  std::mt19937_64 rng(10);
  std::vector<std::vector<double>> maps;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> m(16 * 16);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) m[r * 16 + c] = 0.5 + 0.4 * std::sin(0.3 * r + 0.2 * c + i);
    maps.push_back(m);
  }
  LearnedPatchCodec codec(16, 4, 4);
  const auto before = codec.decode(codec.encode(maps[0]));
  double err0 = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) err0 += (before[i] - maps[0][i]) * (before[i] - maps[0][i]);
  const double final_loss = codec.fit(maps, 300, 1, 1e-2);
  const auto after = codec.decode(codec.encode(maps[0]));
  double err1 = 0.0;
  for (std::size_t i = 0; i < after.size(); ++i) err1 += (after[i] - maps[0][i]) * (after[i] - maps[0][i]);
  CHECK(err1 < err0);
  CHECK(final_loss < err0 / before.size());
  const auto clone = make_codec(codec.describe());
  CHECK(clone->encode(maps[2]) == codec.encode(maps[2]));
}

TEST_CASE("sampler timesteps and contracts") {
  const auto ts = sampling_timesteps(1000, 50);
  CHECK(ts.size() == 50);
  CHECK(ts.front() == 1000);
  CHECK(ts.back() == 20);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i - 1] - ts[i] == 20);
  CHECK(sampling_timesteps(1000, 1000).back() == 1);
  CHECK_THROWS_AS(sampling_timesteps(1000, 1001), nd::ContractError);
}

TEST_CASE("oracle denoiser recovers the known sample") {
  const auto s = NoiseSchedule::linear();
  std::mt19937_64 rng(11);
  const nd::Shape shape{3, 2, 4, 4};
  const auto x0v = testing::random_values(nd::numel(shape), rng, -1.0, 1.0);
  const EpsFn oracle = [&](const nd::Tensor& z, std::size_t t) {
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1 - s.alpha_bar(t));
    std::vector<double> e(z.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z.data()[i] - a * x0v[i]) / b;
    return nd::Tensor::from(z.shape(), e);
  };
  for (auto kind : {SamplerKind::kDeterministic, SamplerKind::kStochastic}) {
    for (std::size_t steps : {50, 1000}) {
      const auto out = sample(oracle, shape, s, {kind, steps, 3});
      CHECK(out.shape() == shape);
      double worst = 0.0;
      for (std::size_t i = 0; i < x0v.size(); ++i) worst = std::max(worst, std::abs(out.data()[i] - x0v[i]));
      CHECK(worst <= 1e-3);
    }
  }
  const auto a = sample(oracle, shape, s, {SamplerKind::kStochastic, 50, 9});
  const auto b = sample(oracle, shape, s, {SamplerKind::kStochastic, 50, 9});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK_THROWS_AS(sample(oracle, shape, s, {SamplerKind::kDeterministic, 2000, 0}), nd::ContractError);
}

TEST_CASE("x0 projection") {
  const auto s = NoiseSchedule::linear();
  std::mt19937_64 rng(12);
  const nd::Shape shape{2, 1, 4, 4};
  const auto x0v = testing::random_values(nd::numel(shape), rng, -1.0, 1.0);
  auto oracle_for = [&](double shift) {
    return EpsFn([&s, &x0v, shift](const nd::Tensor& z, std::size_t t) {
      const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1 - s.alpha_bar(t));
      std::vector<double> e(z.size());
      for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z.data()[i] - a * (x0v[i] + shift)) / b;
      return nd::Tensor::from(z.shape(), e);
    });
  };
  const X0Projection clamp = [](std::vector<double>& x) {
    for (auto& v : x) v = std::clamp(v, -1.0, 1.0);
  };
  // In-domain target: the projection is inactive at the fixed point.
  const auto in = sample(oracle_for(0.0), shape, s, {SamplerKind::kDeterministic, 50, 1}, clamp);
  for (std::size_t i = 0; i < x0v.size(); ++i) CHECK(std::abs(in.data()[i] - x0v[i]) <= 1e-3);
  // A predictor that overshoots the domain is pulled back onto its boundary.
  const auto out = sample(oracle_for(5.0), shape, s, {SamplerKind::kDeterministic, 50, 1}, clamp);
  for (double v : out.data()) CHECK(std::abs(v - 1.0) <= 1e-9);
  const X0Projection shrink = [](std::vector<double>& x) { x.pop_back(); };
  CHECK_THROWS_AS(sample(oracle_for(0.0), shape, s, {}, shrink), nd::ShapeError);
}
