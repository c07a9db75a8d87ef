#pragma once

#include <cstddef>
#include <span>

// Raw compute kernels behind the differentiable ops.
//
// `kernels::` holds the OpenMP-parallel versions used everywhere. Work is split
// over independent output rows only, so results do not depend on the thread
// count. `kernels::reference::` holds plain serial loops written for
// readability; tests and the benchmark compare the two.

namespace ckm::nd::kernels {

/// Sets the OpenMP thread count used by the parallel kernels (0 = runtime default).
void set_num_threads(int threads);
int num_threads();

/// C[M,N] (+)= A[M,K] * B[K,N], all row-major.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// C[M,N] (+)= A[K,M]^T * B[K,N].
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// C[M,N] (+)= A[M,K] * B[N,K]^T.
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// out[N,O,Ho,Wo] = conv(x[N,C,H,W], w[O,C,k,k]) + bias[O] (bias may be empty).
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);

/// Accumulates input, weight and bias gradients. Any output span may be empty
/// to skip that gradient.
void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_bias);

/// Row-wise softmax of a [rows, cols] matrix.
void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                  std::size_t cols);

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n);

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_bias);

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                  std::size_t cols);

}  // namespace reference

}  // namespace ckm::nd::kernels
