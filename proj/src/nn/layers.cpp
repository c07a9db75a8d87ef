#include "ckm/nn/layers.hpp"

#include <cmath>

namespace ckm::nn {

nd::Tensor ParamFactory::normal(const std::string& name, nd::Shape shape, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  std::vector<double> v(nd::numel(shape));
  for (auto& x : v) x = n(rng_);
  return store_.add(name, nd::Tensor::from(std::move(shape), std::move(v), true));
}

nd::Tensor ParamFactory::constant(const std::string& name, nd::Shape shape, double value) {
  return store_.add(name, nd::Tensor::full(std::move(shape), value, true));
}

Linear Linear::create(ParamFactory& f, const std::string& name, std::size_t in, std::size_t out,
                      bool bias, bool zero) {
  Linear l;
  const double sd = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
  l.w = zero ? f.constant(name + ".w", {in, out}, 0.0) : f.normal(name + ".w", {in, out}, sd);
  if (bias) l.b = f.constant(name + ".b", {out}, 0.0);
  return l;
}

Conv2d Conv2d::create(ParamFactory& f, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t stride, bool zero) {
  Conv2d c;
  const double fan_in = static_cast<double>(in * kernel * kernel);
  c.w = zero ? f.constant(name + ".w", {out, in, kernel, kernel}, 0.0)
             : f.normal(name + ".w", {out, in, kernel, kernel}, 1.0 / std::sqrt(fan_in));
  c.b = f.constant(name + ".b", {out}, 0.0);
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

GroupNorm GroupNorm::create(ParamFactory& f, const std::string& name, std::size_t channels,
                            std::size_t groups) {
  if (groups == 0 || channels % groups != 0)
    throw nd::ContractError(name + ": " + std::to_string(groups) + " groups do not divide " +
                            std::to_string(channels) + " channels");
  GroupNorm g;
  g.groups = groups;
  g.gamma = f.constant(name + ".gamma", {channels}, 1.0);
  g.beta = f.constant(name + ".beta", {channels}, 0.0);
  return g;
}

ResBlock ResBlock::create(ParamFactory& f, const std::string& name, std::size_t in,
                          std::size_t out, std::size_t time_dim, std::size_t groups) {
  ResBlock r;
  r.norm1 = GroupNorm::create(f, name + ".norm1", in, groups);
  r.conv1 = Conv2d::create(f, name + ".conv1", in, out);
  r.time_proj = Linear::create(f, name + ".time", time_dim, out);
  r.norm2 = GroupNorm::create(f, name + ".norm2", out, groups);
  r.conv2 = Conv2d::create(f, name + ".conv2", out, out);
  r.has_skip = in != out;
  if (r.has_skip) r.skip = Conv2d::create(f, name + ".skip", in, out, 1);
  return r;
}

nd::Tensor ResBlock::operator()(const nd::Tensor& x, const nd::Tensor& temb) const {
  auto h = conv1(nd::silu(norm1(x)));
  const auto bias = time_proj(nd::silu(temb));
  h = h + nd::reshape(bias, {1, bias.dim(1), 1, 1});
  h = conv2(nd::silu(norm2(h)));
  return (has_skip ? skip(x) : x) + h;
}

nd::Tensor timestep_features(std::size_t t, std::size_t dim) {
  if (dim == 0 || dim % 2) throw nd::ContractError("timestep feature size must be even");
  const std::size_t half = dim / 2;
  std::vector<double> v(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    v[k] = std::sin(static_cast<double>(t) * w);
    v[half + k] = std::cos(static_cast<double>(t) * w);
  }
  return nd::Tensor::from({1, dim}, std::move(v));
}

nd::Tensor to_tokens(const nd::Tensor& x) {
  if (x.rank() != 4) throw nd::ShapeError("to_tokens expects [N,C,H,W], got " + nd::shape_str(x.shape()));
  const auto p = nd::permute(x, {0, 2, 3, 1});
  return nd::reshape(p, {x.dim(0) * x.dim(2) * x.dim(3), x.dim(1)});
}

nd::Tensor from_tokens(const nd::Tensor& tokens, std::size_t n, std::size_t h, std::size_t w) {
  const auto x = nd::reshape(tokens, {n, h, w, tokens.dim(1)});
  return nd::permute(x, {0, 3, 1, 2});
}

namespace {

nd::Tensor attend(const nd::Tensor& q, const nd::Tensor& k, const nd::Tensor& v,
                  AttentionTrace::Weights* trace) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const auto a = nd::softmax(nd::matmul(q, nd::transpose(k)) * scale, 1);
  if (trace) {
    trace->rows = a.dim(0);
    trace->cols = a.dim(1);
    trace->values.assign(a.data().begin(), a.data().end());
  }
  return nd::matmul(a, v);
}

}  // namespace

SelfAttention SelfAttention::create(ParamFactory& f, const std::string& name, std::size_t dim,
                                    std::size_t groups) {
  if (dim % 4) throw nd::ContractError(name + ": width " + std::to_string(dim) + " is not a multiple of 4");
  SelfAttention a;
  a.norm = GroupNorm::create(f, name + ".norm", dim, groups);
  a.q = Linear::create(f, name + ".q", dim, dim, false);
  a.k = Linear::create(f, name + ".k", dim, dim, false);
  a.v = Linear::create(f, name + ".v", dim, dim, false);
  a.out = Linear::create(f, name + ".out", dim, dim, true, true);
  return a;
}

nd::Tensor SelfAttention::operator()(const nd::Tensor& x,
                                     const std::vector<bsle::PolarLocation>& locs,
                                     AttentionTrace::Weights* trace) const {
  if (x.rank() != 2 || x.dim(1) != q.in())
    throw nd::ContractError("self-attention expects [rows, " + std::to_string(q.in()) + "], got " +
                            nd::shape_str(x.shape()));
  const auto h = norm(x);
  const auto qr = bsle::rotate_rows(q(h), locs);
  const auto kr = bsle::rotate_rows(k(h), locs);
  return x + out(attend(qr, kr, v(h), trace));
}

CrossAttention CrossAttention::create(ParamFactory& f, const std::string& name, std::size_t dim_x,
                                      std::size_t dim_y, std::size_t groups) {
  if (dim_x % 4 || dim_y % 4) throw nd::ContractError(name + ": widths must be multiples of 4");
  CrossAttention a;
  a.norm = GroupNorm::create(f, name + ".norm", dim_x, groups);
  a.q = Linear::create(f, name + ".q", dim_x, dim_y, false);
  a.k = Linear::create(f, name + ".k", dim_y, dim_y, false);
  a.v = Linear::create(f, name + ".v", dim_y, dim_y, false);
  a.out = Linear::create(f, name + ".out", dim_y, dim_x, true, true);
  return a;
}

nd::Tensor CrossAttention::operator()(const nd::Tensor& x,
                                      const std::vector<bsle::PolarLocation>& x_locs,
                                      const nd::Tensor& y,
                                      const std::vector<bsle::PolarLocation>& y_locs,
                                      AttentionTrace::Weights* trace) const {
  if (x.rank() != 2 || x.dim(1) != q.in())
    throw nd::ContractError("cross-attention expects target tokens [rows, " +
                            std::to_string(q.in()) + "], got " + nd::shape_str(x.shape()));
  if (y.rank() != 2 || y.dim(1) != k.in())
    throw nd::ContractError("cross-attention expects source tokens [rows, " +
                            std::to_string(k.in()) + "], got " + nd::shape_str(y.shape()));
  const auto qr = bsle::rotate_rows(q(norm(x)), x_locs);
  const auto kr = bsle::rotate_rows(k(y), y_locs);
  return x + out(attend(qr, kr, v(y), trace));
}

}  // namespace ckm::nn
