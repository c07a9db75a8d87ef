#pragma once

#include <cstddef>
#include <vector>

#include "ckm/numerics/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast with the usual
// trailing-axis rules (extents equal or 1).

namespace ckm::nd {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

/// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[rows, in] * w[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
std::vector<Tensor> split(const Tensor& x, const std::vector<std::size_t>& sizes,
                          std::size_t axis);
/// Contiguous slice [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over one axis; the axis is removed from the shape.
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// x * sigmoid(x)
Tensor silu(const Tensor& x);

/// x[N,C,H,W] (*) w[O,C,k,k] + bias[O]; bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// Nearest-neighbour 2x upsample of [N,C,H,W].
Tensor upsample_nearest2x(const Tensor& x);
/// Group normalization of [N,C,H,W] (or [rows, C] treated as H=W=1 per row)
/// with per-channel affine gamma/beta.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Mean squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace ckm::nd
