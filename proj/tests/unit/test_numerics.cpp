#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "ckm/numerics/checkpoint.hpp"
#include "ckm/numerics/kernels.hpp"
#include "ckm/numerics/ops.hpp"
#include "ckm/numerics/optim.hpp"
#include "support/gradcheck.hpp"

using namespace ckm;
using nd::Shape;
using nd::Tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Shape random_shape(std::mt19937_64& rng, std::size_t max_rank = 3, std::size_t max_extent = 4) {
  Shape s(pick(rng, 1, max_rank));
  for (auto& e : s) e = pick(rng, 1, max_extent);
  return s;
}

struct Case {
  std::vector<Tensor> inputs;
  testing::TensorFn fn;
};

using CaseGen = std::function<Case(std::mt19937_64&)>;

}  // namespace

TEST_CASE("elementwise and linear-algebra examples") {
  auto a = Tensor::from({2}, {1, 2});
  auto b = Tensor::from({2}, {3, 4});
  CHECK(values(nd::add(a, b)) == std::vector<double>{4, 6});

  auto s = nd::softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  auto m = testing::random_tensor({3, 3}, rng, false);
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(nd::matmul(eye, m)) == values(m));
  CHECK(values(nd::matmul(m, eye)) == values(m));
}

TEST_CASE("shape mismatch names both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4, 2});
  try {
    nd::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const nd::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(nd::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), nd::ShapeError);
}

TEST_CASE("broadcasting over trailing extents") {
  auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto bias = Tensor::from({3}, {10, 20, 30});
  CHECK(values(nd::add(x, bias)) == std::vector<double>{11, 22, 33, 14, 25, 36});
  auto col = Tensor::from({2, 1}, {2, 3});
  CHECK(values(nd::mul(x, col)) == std::vector<double>{2, 4, 6, 12, 15, 18});
}

TEST_CASE("backward basics") {
  auto x = Tensor::from({2}, {1, 2}, true);
  nd::backward(nd::sum(nd::square(x)));
  CHECK(values(Tensor::from({2}, {x.grad()[0], x.grad()[1]})) == std::vector<double>{2, 4});

  SUBCASE("repeated calls accumulate") {
    nd::backward(nd::sum(nd::square(x)));
    CHECK(x.grad()[0] == 4.0);
    CHECK(x.grad()[1] == 8.0);
  }
  SUBCASE("constant root gives zero gradient") {
    x.zero_grad();
    auto c = Tensor::from({1}, {5.0});
    auto root = nd::add(nd::scale(nd::sum(x), 0.0), c);
    nd::backward(root);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
  }
  SUBCASE("non-scalar root is rejected") {
    CHECK_THROWS_AS(nd::backward(nd::square(x)), nd::ContractError);
  }
}

TEST_CASE("no-grad guard drops history") {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    nd::NoGradGuard guard;
    y = nd::square(x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("three-layer network gradient matches finite differences") {
  std::mt19937_64 rng(11);
  std::vector<Tensor> in{
      testing::random_tensor({5, 4}, rng, false), testing::random_tensor({4, 8}, rng),
      testing::random_tensor({8}, rng),          testing::random_tensor({8, 8}, rng),
      testing::random_tensor({8}, rng),          testing::random_tensor({8, 2}, rng),
      testing::random_tensor({2}, rng)};
  auto net = [](const std::vector<Tensor>& p) {
    auto h = nd::silu(nd::linear(p[0], p[1], p[2]));
    h = nd::silu(nd::linear(h, p[3], p[4]));
    return nd::linear(h, p[5], p[6]);
  };
  CHECK(testing::gradcheck(net, in) <= 1e-5);
}

TEST_CASE("every primitive passes the gradient check on 100 random shapes") {
  std::vector<std::pair<std::string, CaseGen>> cases;
  auto unary_case = [](auto op, double lo, double hi) {
    return [op, lo, hi](std::mt19937_64& rng) {
      return Case{{testing::random_tensor(random_shape(rng), rng, true, lo, hi)},
                  [op](const std::vector<Tensor>& p) { return op(p[0]); }};
    };
  };
  auto broadcast_case = [](auto op) {
    return [op](std::mt19937_64& rng) {
      Shape a = random_shape(rng);
      Shape b(a.begin() + static_cast<long>(pick(rng, 0, a.size() - 1)), a.end());
      for (auto& e : b)
        if (pick(rng, 0, 3) == 0) e = 1;
      return Case{{testing::random_tensor(a, rng), testing::random_tensor(b, rng)},
                  [op](const std::vector<Tensor>& p) { return op(p[0], p[1]); }};
    };
  };
  cases.emplace_back("add", broadcast_case([](auto& a, auto& b) { return nd::add(a, b); }));
  cases.emplace_back("sub", broadcast_case([](auto& a, auto& b) { return nd::sub(a, b); }));
  cases.emplace_back("mul", broadcast_case([](auto& a, auto& b) { return nd::mul(a, b); }));
  cases.emplace_back("scale", unary_case([](auto& x) { return nd::scale(x, -1.7); }, -1, 1));
  cases.emplace_back("square", unary_case([](auto& x) { return nd::square(x); }, -1, 1));
  cases.emplace_back("sqrt", unary_case([](auto& x) { return nd::sqrt(x); }, 0.5, 2.0));
  cases.emplace_back("exp", unary_case([](auto& x) { return nd::exp(x); }, -1, 1));
  cases.emplace_back("log", unary_case([](auto& x) { return nd::log(x); }, 0.5, 2.0));
  cases.emplace_back("silu", unary_case([](auto& x) { return nd::silu(x); }, -3, 3));
  cases.emplace_back("sum", unary_case([](auto& x) { return nd::sum(x); }, -1, 1));
  cases.emplace_back("mean", unary_case([](auto& x) { return nd::mean(x); }, -1, 1));
  cases.emplace_back("matmul", [](std::mt19937_64& rng) {
    const auto m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    return Case{{testing::random_tensor({m, k}, rng), testing::random_tensor({k, n}, rng)},
                [](const std::vector<Tensor>& p) { return nd::matmul(p[0], p[1]); }};
  });
  cases.emplace_back("linear", [](std::mt19937_64& rng) {
    const auto m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
    return Case{{testing::random_tensor({m, k}, rng), testing::random_tensor({k, n}, rng),
                 testing::random_tensor({n}, rng)},
                [](const std::vector<Tensor>& p) { return nd::linear(p[0], p[1], p[2]); }};
  });
  cases.emplace_back("transpose", [](std::mt19937_64& rng) {
    return Case{{testing::random_tensor({pick(rng, 1, 4), pick(rng, 1, 4)}, rng)},
                [](const std::vector<Tensor>& p) { return nd::transpose(p[0]); }};
  });
  cases.emplace_back("permute", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng, 4);
    std::vector<std::size_t> axes(s.size());
    std::iota(axes.begin(), axes.end(), 0);
    std::shuffle(axes.begin(), axes.end(), rng);
    return Case{{testing::random_tensor(s, rng)},
                [axes](const std::vector<Tensor>& p) { return nd::permute(p[0], axes); }};
  });
  cases.emplace_back("reshape", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng);
    return Case{{testing::random_tensor(s, rng)}, [](const std::vector<Tensor>& p) {
                  return nd::reshape(p[0], {p[0].size()});
                }};
  });
  cases.emplace_back("concat", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng);
    const auto axis = pick(rng, 0, s.size() - 1);
    Shape s2 = s;
    s2[axis] = pick(rng, 1, 3);
    return Case{{testing::random_tensor(s, rng), testing::random_tensor(s2, rng)},
                [axis](const std::vector<Tensor>& p) { return nd::concat({p[0], p[1]}, axis); }};
  });
  cases.emplace_back("split", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng);
    const auto axis = pick(rng, 0, s.size() - 1);
    s[axis] = pick(rng, 2, 5);
    const auto first = pick(rng, 1, s[axis] - 1);
    const auto rest = s[axis] - first;
    return Case{{testing::random_tensor(s, rng)}, [axis, first, rest](const std::vector<Tensor>& p) {
                  auto parts = nd::split(p[0], {first, rest}, axis);
                  return nd::add(nd::sum(nd::square(parts[0])), nd::sum(parts[1]));
                }};
  });
  cases.emplace_back("softmax", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng);
    const auto axis = pick(rng, 0, s.size() - 1);
    return Case{{testing::random_tensor(s, rng, true, -2, 2)},
                [axis](const std::vector<Tensor>& p) { return nd::softmax(p[0], axis); }};
  });
  cases.emplace_back("sum_axis", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng);
    const auto axis = pick(rng, 0, s.size() - 1);
    return Case{{testing::random_tensor(s, rng)},
                [axis](const std::vector<Tensor>& p) { return nd::sum_axis(p[0], axis); }};
  });
  cases.emplace_back("conv2d", [](std::mt19937_64& rng) {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const auto h = pick(rng, 3, 6), w = pick(rng, 3, 6), stride = pick(rng, 1, 2);
    return Case{{testing::random_tensor({n, c, h, w}, rng), testing::random_tensor({o, c, 3, 3}, rng),
                 testing::random_tensor({o}, rng)},
                [stride](const std::vector<Tensor>& p) {
                  return nd::conv2d(p[0], p[1], p[2], stride, 1);
                }};
  });
  cases.emplace_back("upsample", [](std::mt19937_64& rng) {
    return Case{{testing::random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3),
                                         pick(rng, 1, 3)},
                                        rng)},
                [](const std::vector<Tensor>& p) { return nd::upsample_nearest2x(p[0]); }};
  });
  cases.emplace_back("group_norm", [](std::mt19937_64& rng) {
    const auto groups = pick(rng, 1, 3);
    const auto c = groups * pick(rng, 1, 2);
    Shape s{pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 2, 3)};
    return Case{{testing::random_tensor(s, rng), testing::random_tensor({c}, rng),
                 testing::random_tensor({c}, rng)},
                [groups](const std::vector<Tensor>& p) {
                  return nd::group_norm(p[0], groups, p[1], p[2]);
                }};
  });
  cases.emplace_back("mse", [](std::mt19937_64& rng) {
    Shape s = random_shape(rng);
    return Case{{testing::random_tensor(s, rng), testing::random_tensor(s, rng)},
                [](const std::vector<Tensor>& p) { return nd::mse(p[0], p[1]); }};
  });

  for (auto& [name, gen] : cases) {
    std::mt19937_64 rng(std::hash<std::string>{}(name));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Case c = gen(rng);
      worst = std::max(worst, testing::gradcheck(c.fn, c.inputs, 100 + trial));
    }
    INFO(name << " worst relative error " << worst);
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("softmax rows are a probability simplex") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = testing::random_tensor({pick(rng, 1, 6), pick(rng, 1, 9)}, rng, false, -30, 30);
    auto y = nd::softmax(x, 1);
    for (std::size_t r = 0; r < x.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.dim(1); ++c) {
        CHECK(y.data()[r * x.dim(1) + c] >= 0.0);
        s += y.data()[r * x.dim(1) + c];
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("reshape preserves data order") {
  std::mt19937_64 rng(9);
  auto x = testing::random_tensor({2, 3, 4}, rng, false);
  auto y = nd::reshape(nd::reshape(x, {4, 6}), {2, 3, 4});
  CHECK(values(y) == values(x));
  CHECK(values(nd::reshape(x, {24})) == values(x));
}

TEST_CASE("parallel kernels agree with the serial reference") {
  std::mt19937_64 rng(21);
  const std::size_t m = 37, k = 53, n = 29;
  auto a = testing::random_values(m * k, rng);
  auto b = testing::random_values(k * n, rng);
  std::vector<double> c(m * n), ref(m * n);
  nd::kernels::gemm(a, b, c, m, k, n, false);
  nd::kernels::reference::gemm(a, b, ref, m, k, n);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  nd::kernels::ConvGeometry g{2, 3, 9, 7, 4, 3, 2, 1};
  auto x = testing::random_values(g.batch * g.in_channels * g.height * g.width, rng);
  auto w = testing::random_values(g.out_channels * g.in_channels * 9, rng);
  auto bias = testing::random_values(g.out_channels, rng);
  const std::size_t out_n = g.batch * g.out_channels * g.out_height() * g.out_width();
  std::vector<double> out(out_n), out_ref(out_n);
  nd::kernels::conv2d_forward(g, x, w, bias, out);
  nd::kernels::reference::conv2d_forward(g, x, w, bias, out_ref);
  for (std::size_t i = 0; i < out_n; ++i) CHECK(out[i] == doctest::Approx(out_ref[i]).epsilon(1e-12));

  auto go = testing::random_values(out_n, rng);
  std::vector<double> gx(x.size(), 0.0), gw(w.size(), 0.0), gb(bias.size(), 0.0);
  std::vector<double> gx_ref(x.size(), 0.0), gw_ref(w.size(), 0.0), gb_ref(bias.size(), 0.0);
  nd::kernels::conv2d_backward(g, x, w, go, gx, gw, gb);
  nd::kernels::reference::conv2d_backward(g, x, w, go, gx_ref, gw_ref, gb_ref);
  for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == doctest::Approx(gx_ref[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < gw.size(); ++i) CHECK(gw[i] == doctest::Approx(gw_ref[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < gb.size(); ++i) CHECK(gb[i] == doctest::Approx(gb_ref[i]).epsilon(1e-12));
}

TEST_CASE("parallel kernels are independent of the thread count") {
  std::mt19937_64 rng(22);
  const std::size_t m = 67, k = 129, n = 71;
  auto a = testing::random_values(m * k, rng);
  auto b = testing::random_values(k * n, rng);
  std::vector<double> c1(m * n), c4(m * n);
  nd::kernels::set_num_threads(1);
  nd::kernels::gemm(a, b, c1, m, k, n, false);
  nd::kernels::set_num_threads(4);
  nd::kernels::gemm(a, b, c4, m, k, n, false);
  nd::kernels::set_num_threads(0);
  CHECK(c1 == c4);
}

TEST_CASE("adam with a zero gradient leaves parameters unchanged") {
  nd::ParamStore params;
  auto& w = params.add("w", Tensor::from({3}, {0.5, -1.0, 2.0}, true));
  w.mutable_grad();
  nd::Adam adam(params, {});
  adam.step();
  CHECK(values(w) == std::vector<double>{0.5, -1.0, 2.0});
  CHECK(adam.state().step == 1);
}

TEST_CASE("adam rejects parameters without gradients") {
  nd::ParamStore params;
  params.add("w", Tensor::from({1}, {1.0}, true));
  nd::Adam adam(params, {});
  CHECK_THROWS_AS(adam.step(), nd::ContractError);
}

TEST_CASE("learning-rate schedule: warm-up then cosine within bounds") {
  nd::LrSchedule s;  // [1e-5, 1e-4]
  s.warmup_steps = 50;
  s.total_steps = 200;
  CHECK(s.at(50) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(s.at(200) == doctest::Approx(1e-5).epsilon(1e-12));
  for (std::size_t step = 1; step <= 400; ++step) {
    CHECK(s.at(step) >= 1e-5);
    CHECK(s.at(step) <= 1e-4);
    if (step > 50 && step <= 200) CHECK(s.at(step) <= s.at(step - 1));
  }
}

TEST_CASE("adam on a quadratic bowl decreases |x| monotonically after warm-up") {
  nd::ParamStore params;
  auto& x = params.add("x", Tensor::from({1}, {1.0}, true));
  nd::AdamConfig cfg;
  cfg.schedule.warmup_steps = 20;
  cfg.schedule.total_steps = 200;
  nd::Adam adam(params, cfg);
  double prev = std::abs(x.item());
  for (std::size_t step = 1; step <= 200; ++step) {
    params.zero_grad();
    nd::backward(nd::sum(nd::square(x)));
    adam.step();
    const double now = std::abs(x.item());
    if (step > cfg.schedule.warmup_steps) CHECK(now < prev);
    prev = now;
  }
  CHECK(prev < 1.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(31);
  nd::ParamStore params;
  params.add("a", testing::random_tensor({3, 4}, rng));
  params.add("b/c", testing::random_tensor({5}, rng));
  nd::Checkpoint ckpt;
  ckpt.meta["note"] = "x";
  nd::store_params(ckpt, params);
  ckpt.add("half", {2}, {0.5, -0.25}, nd::DType::kF32);
  const auto path = std::filesystem::temp_directory_path() / "ckm_test_numerics.ckpt";
  nd::save_checkpoint(path, ckpt);
  auto loaded = nd::load_checkpoint(path);
  CHECK(loaded.meta["note"] == "x");

  nd::ParamStore other;
  other.add("a", Tensor::zeros({3, 4}, true));
  other.add("b/c", Tensor::zeros({5}, true));
  nd::restore_params(loaded, other);
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(std::memcmp(params.at(i).data().data(), other.at(i).data().data(),
                      params.at(i).size() * sizeof(double)) == 0);
  }
  CHECK(loaded.find("half").values == std::vector<double>{0.5, -0.25});
  nd::save_checkpoint(path.string() + "2", loaded);
  std::ifstream f1(path, std::ios::binary), f2(path.string() + "2", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + "2");

  nd::ParamStore wrong;
  wrong.add("a", Tensor::zeros({4, 3}, true));
  CHECK_THROWS_AS(nd::restore_params(loaded, wrong), nd::ShapeError);
}
