#include "ckm/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ckm/numerics/kernels.hpp"

namespace ckm::nd {

namespace {

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

// ---------------------------------------------------------------- broadcasting

struct Broadcast {
  Shape out;
  bool same = true;
  std::vector<std::uint32_t> a_off, b_off;  // filled only when shapes differ
};

Broadcast broadcast_plan(const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    return plan;
  }
  plan.same = false;
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<long>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<long>(rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : acc_a;
    sb[i] = pb[i] == 1 ? 0 : acc_b;
    acc_a *= pa[i];
    acc_b *= pb[i];
  }
  const std::size_t n = numel(plan.out);
  plan.a_off.resize(n);
  plan.b_off.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    plan.a_off[flat] = static_cast<std::uint32_t>(oa);
    plan.b_off[flat] = static_cast<std::uint32_t>(ob);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < plan.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

enum class BinOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
  auto plan = std::make_shared<Broadcast>(broadcast_plan(a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<double> out(n);
  auto da = a.data();
  auto db = b.data();
  auto apply = [op](double x, double y) {
    switch (op) {
      case BinOp::kAdd: return x + y;
      case BinOp::kSub: return x - y;
      default: return x * y;
    }
  };
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(da[i], db[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(da[plan->a_off[i]], db[plan->b_off[i]]);
  }
  Shape shape = plan->out;
  return make_result(std::move(shape), std::move(out), {a, b}, [plan, op](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const auto& g = self.grad;
    const std::size_t n = g.size();
    auto ia = [&](std::size_t i) { return plan->same ? i : plan->a_off[i]; };
    auto ib = [&](std::size_t i) { return plan->same ? i : plan->b_off[i]; };
    if (wants(self, 0)) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        ga[ia(i)] += op == BinOp::kMul ? g[i] * pb.data[ib(i)] : g[i];
      }
    }
    if (wants(self, 1)) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case BinOp::kAdd: gb[ib(i)] += g[i]; break;
          case BinOp::kSub: gb[ib(i)] -= g[i]; break;
          case BinOp::kMul: gb[ib(i)] += g[i] * pa.data[ia(i)]; break;
        }
      }
    }
  });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(x.shape(), std::move(out), {x}, [dfdx](Node& self) {
    Node& p = parent(self, 0);
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * dfdx(p.data[i], self.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::kMul); }

Tensor scale(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm(a.data(), b.data(), out, m, k, n, false);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (wants(self, 0)) kernels::gemm_nt(self.grad, pb.data, pa.ensure_grad(), m, n, k, true);
    if (wants(self, 1)) kernels::gemm_tn(pa.data, self.grad, pb.ensure_grad(), k, m, n, true);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                     shape_str(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                     shape_str(w.shape()));
  }
  std::vector<double> out(rows * out_dim);
  if (has_bias) {
    auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(bd.begin(), bd.end(), out.begin() + static_cast<long>(r * out_dim));
  }
  kernels::gemm(x.data(), w.data(), out, rows, in, out_dim, has_bias);
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result({rows, out_dim}, std::move(out), parents,
                     [rows, in, out_dim, has_bias](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pw = parent(self, 1);
                       if (wants(self, 0))
                         kernels::gemm_nt(self.grad, pw.data, px.ensure_grad(), rows, out_dim, in,
                                          true);
                       if (wants(self, 1))
                         kernels::gemm_tn(px.data, self.grad, pw.ensure_grad(), in, rows, out_dim,
                                          true);
                       if (has_bias && wants(self, 2)) {
                         auto& gb = parent(self, 2).ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < out_dim; ++j)
                             gb[j] += self.grad[r * out_dim + j];
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  return permute(x, {1, 0});
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) {
    throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for " + shape_str(in));
  }
  std::vector<bool> used(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || used[axes[i]]) throw ShapeError("permute: invalid axis order");
    used[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  std::vector<std::size_t> in_strides(rank);
  std::size_t acc = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = acc;
    acc *= in[i];
  }
  const std::size_t n = numel(in);
  // Source offset of every output element.
  auto src = std::make_shared<std::vector<std::uint32_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*src)[flat] = static_cast<std::uint32_t>(off);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += in_strides[axes[d]];
      if (idx[d] < out_shape[d]) break;
      off -= in_strides[axes[d]] * idx[d];
      idx[d] = 0;
    }
  }
  auto xd = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src)[i]];
  return make_result(std::move(out_shape), std::move(out), {x}, [src](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < src->size(); ++i) g[(*src)[i]] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto xd = x.data();
  return make_result(std::move(shape), std::vector<double>(xd.begin(), xd.end()), {x},
                     [](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) {
      throw ShapeError("concat rank mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) {
        throw ShapeError("concat extent mismatch: " + shape_str(parts[0].shape()) + " vs " +
                         shape_str(s));
      }
    }
    lens.push_back(s[axis]);
    total += s[axis];
  }
  out_shape[axis] = total;
  const AxisSplit as = split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    auto pd = parts[pi].data();
    const std::size_t block = lens[pi] * as.inner;
    for (std::size_t o = 0; o < as.outer; ++o) {
      std::copy_n(pd.begin() + static_cast<long>(o * block), block,
                  out.begin() + static_cast<long>(o * total * as.inner + offset * as.inner));
    }
    offset += lens[pi];
  }
  return make_result(std::move(out_shape), std::move(out), parts, [lens, as, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < lens.size(); ++pi) {
      const std::size_t block = lens[pi] * as.inner;
      if (wants(self, pi)) {
        auto& g = parent(self, pi).ensure_grad();
        for (std::size_t o = 0; o < as.outer; ++o)
          for (std::size_t j = 0; j < block; ++j)
            g[o * block + j] += self.grad[o * total * as.inner + offset * as.inner + j];
      }
      offset += lens[pi];
    }
  });
}

std::vector<Tensor> split(const Tensor& x, const std::vector<std::size_t>& sizes,
                          std::size_t axis) {
  const Shape& in = x.shape();
  const AxisSplit as = split_at(in, axis);
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != as.len) {
    throw ShapeError("split sizes do not cover axis of " + shape_str(in));
  }
  std::vector<Tensor> out;
  std::size_t offset = 0;
  auto xd = x.data();
  for (std::size_t len : sizes) {
    Shape s = in;
    s[axis] = len;
    const std::size_t block = len * as.inner;
    std::vector<double> part(as.outer * block);
    for (std::size_t o = 0; o < as.outer; ++o) {
      std::copy_n(xd.begin() + static_cast<long>(o * as.len * as.inner + offset * as.inner), block,
                  part.begin() + static_cast<long>(o * block));
    }
    out.push_back(make_result(std::move(s), std::move(part), {x}, [as, offset, block](Node& self) {
      auto& g = parent(self, 0).ensure_grad();
      for (std::size_t o = 0; o < as.outer; ++o)
        for (std::size_t j = 0; j < block; ++j)
          g[o * as.len * as.inner + offset * as.inner + j] += self.grad[o * block + j];
    }));
    offset += len;
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") of " + shape_str(x.shape()));
  }
  std::vector<std::size_t> sizes;
  if (begin > 0) sizes.push_back(begin);
  sizes.push_back(end - begin);
  if (end < x.dim(0)) sizes.push_back(x.dim(0) - end);
  auto parts = split(x, sizes, 0);
  return parts[begin > 0 ? 1 : 0];
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit as = split_at(x.shape(), axis);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  if (as.inner == 1) {
    kernels::softmax_rows(xd, out, as.outer, as.len);
  } else {
    for (std::size_t o = 0; o < as.outer; ++o)
      for (std::size_t in = 0; in < as.inner; ++in) {
        const std::size_t base = o * as.len * as.inner + in;
        double mx = xd[base];
        for (std::size_t j = 1; j < as.len; ++j) mx = std::max(mx, xd[base + j * as.inner]);
        double s = 0.0;
        for (std::size_t j = 0; j < as.len; ++j) {
          out[base + j * as.inner] = std::exp(xd[base + j * as.inner] - mx);
          s += out[base + j * as.inner];
        }
        for (std::size_t j = 0; j < as.len; ++j) out[base + j * as.inner] /= s;
      }
  }
  return make_result(x.shape(), std::move(out), {x}, [as](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t o = 0; o < as.outer; ++o)
      for (std::size_t in = 0; in < as.inner; ++in) {
        const std::size_t base = o * as.len * as.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < as.len; ++j)
          dot += self.grad[base + j * as.inner] * self.data[base + j * as.inner];
        for (std::size_t j = 0; j < as.len; ++j) {
          const std::size_t i = base + j * as.inner;
          g[i] += self.data[i] * (self.grad[i] - dot);
        }
      }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s / n}, {x}, [n](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit as = split_at(x.shape(), axis);
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<long>(axis));
  if (s.empty()) s.push_back(1);
  auto xd = x.data();
  std::vector<double> out(as.outer * as.inner, 0.0);
  for (std::size_t o = 0; o < as.outer; ++o)
    for (std::size_t j = 0; j < as.len; ++j)
      for (std::size_t in = 0; in < as.inner; ++in)
        out[o * as.inner + in] += xd[(o * as.len + j) * as.inner + in];
  return make_result(std::move(s), std::move(out), {x}, [as](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t o = 0; o < as.outer; ++o)
      for (std::size_t j = 0; j < as.len; ++j)
        for (std::size_t in = 0; in < as.inner; ++in)
          g[(o * as.len + j) * as.inner + in] += self.grad[o * as.inner + in];
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel = w.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (w.dim(1) != g.in_channels || w.dim(3) != g.kernel) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " does not fit kernel " +
                     shape_str(w.shape()));
  }
  if (stride == 0 || g.height + 2 * pad < g.kernel || g.width + 2 * pad < g.kernel) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != g.out_channels) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not fit kernel " +
                     shape_str(w.shape()));
  }
  std::vector<double> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  kernels::conv2d_forward(g, x.data(), w.data(), has_bias ? bias.data() : std::span<const double>{},
                          out);
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result({g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out),
                     parents, [g, has_bias](Node& self) {
                       Node& px = parent(self, 0);
                       Node& pw = parent(self, 1);
                       std::span<double> gx, gw, gb;
                       if (wants(self, 0)) gx = px.ensure_grad();
                       if (wants(self, 1)) gw = pw.ensure_grad();
                       if (has_bias && wants(self, 2)) gb = parent(self, 2).ensure_grad();
                       kernels::conv2d_backward(g, px.data, pw.data, self.grad, gx, gw, gb);
                     });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  auto xd = x.data();
  std::vector<double> out(nc * 4 * h * w);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(c * 2 * h + y) * 2 * w + xx] = xd[(c * h + y / 2) * w + xx / 2];
  return make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {x},
                     [nc, h, w](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t c = 0; c < nc; ++c)
                         for (std::size_t y = 0; y < 2 * h; ++y)
                           for (std::size_t xx = 0; xx < 2 * w; ++xx)
                             g[(c * h + y / 2) * w + xx / 2] +=
                                 self.grad[(c * 2 * h + y) * 2 * w + xx];
                     });
}

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() != 4 && x.rank() != 2) {
    throw ShapeError("group_norm expects [N,C,H,W] or [N,C], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                     shape_str(x.shape()));
  }
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("group_norm: affine " + shape_str(gamma.shape()) + " does not fit " +
                     shape_str(x.shape()));
  }
  const std::size_t cpg = c / groups, gsize = cpg * hw;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> out(xd.size());
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  auto inv_std = std::make_shared<std::vector<double>>(n * groups);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (b * c + gi * cpg) * hw;
      double mu = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) mu += xd[base + i];
      mu /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[b * groups + gi] = is;
      for (std::size_t i = 0; i < gsize; ++i) {
        const std::size_t ch = gi * cpg + i / hw;
        const double h = (xd[base + i] - mu) * is;
        (*xhat)[base + i] = h;
        out[base + i] = gd[ch] * h + bd[ch];
      }
    }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [n, c, hw, groups, cpg, gsize, xhat, inv_std](Node& self) {
                       Node& pg = parent(self, 1);
                       const auto& gy = self.grad;
                       if (wants(self, 1) || wants(self, 2)) {
                         std::vector<double> dg(c, 0.0), db(c, 0.0);
                         for (std::size_t b = 0; b < n; ++b)
                           for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t i = 0; i < hw; ++i) {
                               const std::size_t idx = (b * c + ch) * hw + i;
                               dg[ch] += gy[idx] * (*xhat)[idx];
                               db[ch] += gy[idx];
                             }
                         if (wants(self, 1)) {
                           auto& g = pg.ensure_grad();
                           for (std::size_t ch = 0; ch < c; ++ch) g[ch] += dg[ch];
                         }
                         if (wants(self, 2)) {
                           auto& g = parent(self, 2).ensure_grad();
                           for (std::size_t ch = 0; ch < c; ++ch) g[ch] += db[ch];
                         }
                       }
                       if (!wants(self, 0)) return;
                       auto& gx = parent(self, 0).ensure_grad();
                       std::vector<double> gh(gsize);
                       for (std::size_t b = 0; b < n; ++b)
                         for (std::size_t gi = 0; gi < groups; ++gi) {
                           const std::size_t base = (b * c + gi * cpg) * hw;
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t i = 0; i < gsize; ++i) {
                             gh[i] = gy[base + i] * pg.data[gi * cpg + i / hw];
                             m1 += gh[i];
                             m2 += gh[i] * (*xhat)[base + i];
                           }
                           m1 /= static_cast<double>(gsize);
                           m2 /= static_cast<double>(gsize);
                           const double is = (*inv_std)[b * groups + gi];
                           for (std::size_t i = 0; i < gsize; ++i)
                             gx[base + i] += is * (gh[i] - m1 - (*xhat)[base + i] * m2);
                         }
                     });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto ad = a.data();
  auto bd = b.data();
  const double n = static_cast<double>(ad.size());
  double s = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) s += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  return make_result({1}, {s / n}, {a, b}, [n](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double g = self.grad[0] * 2.0 / n;
    if (wants(self, 0)) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (pa.data[i] - pb.data[i]);
    }
    if (wants(self, 1)) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (pa.data[i] - pb.data[i]);
    }
  });
}

}  // namespace ckm::nd
