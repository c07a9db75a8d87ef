#include "ckm/numerics/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace ckm::nd::kernels {

namespace {

int g_threads = 0;

// Below this many multiply-adds a gemm runs on the calling thread.
constexpr std::size_t kParallelWork = 1u << 16;

// Four rows of C at a time so every loaded row of B feeds four accumulators.
// Each C element still sums its k terms in increasing order, so the result
// matches the one-row path bit for bit.
void gemm_row_block(const double* a, const double* b, double* c, std::size_t i0, std::size_t i1,
                    std::size_t k, std::size_t n) {
  std::size_t i = i0;
  for (; i + 4 <= i1; i += 4) {
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    double* c2 = c + (i + 2) * n;
    double* c3 = c + (i + 3) * n;
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = bp[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < i1; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      const double x = ai[p];
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t r1 = std::min(rows, r0 + kTile), c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
    }
  }
}

void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), kk = g.kernel;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xc = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < kk; ++ky) {
      for (std::size_t kx = 0; kx < kk; ++kx) {
        double* row = col + ((c * kk + ky) * kk + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          double* out = row + oy * wo;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* xr = xc + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0
                                                                   : xr[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* x) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), kk = g.kernel;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* xc = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < kk; ++ky) {
      for (std::size_t kx = 0; kx < kk; ++kx) {
        const double* row = col + ((c * kk + ky) * kk + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* xr = xc + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.width)) {
              xr[static_cast<std::size_t>(ix)] += row[oy * wo + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void set_num_threads(int threads) { g_threads = threads; }

int num_threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<long>(m * n), 0.0);
  if (m == 0 || n == 0 || k == 0) return;
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const std::size_t blocks = (m + 3) / 4;
  const bool parallel = m * n * k >= kParallelWork && num_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (parallel)
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * 4;
    gemm_row_block(pa, pb, pc, i0, std::min(m, i0 + 4), k, n);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> at(m * k);
  transpose_into(a.data(), at.data(), k, m);
  gemm(at, b, c, m, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose_into(b.data(), bt.data(), n, k);
  gemm(a, bt, c, m, k, n, accumulate);
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t hw_out = g.out_height() * g.out_width();
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  const std::size_t in_size = g.in_channels * g.height * g.width;
  std::vector<double> col(patch * hw_out);
  for (std::size_t nb = 0; nb < g.batch; ++nb) {
    im2col(g, x.data() + nb * in_size, col.data());
    std::span<double> o = out.subspan(nb * g.out_channels * hw_out, g.out_channels * hw_out);
    if (bias.empty()) {
      std::fill(o.begin(), o.end(), 0.0);
    } else {
      for (std::size_t oc = 0; oc < g.out_channels; ++oc)
        std::fill_n(o.begin() + static_cast<long>(oc * hw_out), hw_out, bias[oc]);
    }
    gemm(w, col, o, g.out_channels, patch, hw_out, true);
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_bias) {
  const std::size_t hw_out = g.out_height() * g.out_width();
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  const std::size_t in_size = g.in_channels * g.height * g.width;
  std::vector<double> col(patch * hw_out);
  std::vector<double> wt;
  if (!grad_x.empty()) {
    wt.resize(patch * g.out_channels);
    transpose_into(w.data(), wt.data(), g.out_channels, patch);
  }
  for (std::size_t nb = 0; nb < g.batch; ++nb) {
    std::span<const double> go = grad_out.subspan(nb * g.out_channels * hw_out,
                                                  g.out_channels * hw_out);
    if (!grad_bias.empty()) {
      for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
        double s = 0.0;
        for (std::size_t j = 0; j < hw_out; ++j) s += go[oc * hw_out + j];
        grad_bias[oc] += s;
      }
    }
    if (!grad_w.empty()) {
      im2col(g, x.data() + nb * in_size, col.data());
      gemm_nt(go, col, grad_w, g.out_channels, hw_out, patch, true);
    }
    if (!grad_x.empty()) {
      gemm(wt, go, col, patch, g.out_channels, hw_out, false);
      col2im_add(g, col.data(), grad_x.data() + nb * in_size);
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                  std::size_t cols) {
  const bool parallel = rows * cols >= kParallelWork && num_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (parallel)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* orow = out.data() + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      s += orow[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < cols; ++j) orow[j] *= inv;
  }
}

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), kk = g.kernel;
  for (std::size_t nb = 0; nb < g.batch; ++nb)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double s = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < kk; ++ky)
              for (std::size_t kx = 0; kx < kk; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                s += w[((oc * g.in_channels + c) * kk + ky) * kk + kx] *
                     x[((nb * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) *
                           g.width +
                       static_cast<std::size_t>(ix)];
              }
          out[((nb * g.out_channels + oc) * ho + oy) * wo + ox] = s;
        }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> grad_out, std::span<double> grad_x,
                     std::span<double> grad_w, std::span<double> grad_bias) {
  const std::size_t ho = g.out_height(), wo = g.out_width(), kk = g.kernel;
  for (std::size_t nb = 0; nb < g.batch; ++nb)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double go = grad_out[((nb * g.out_channels + oc) * ho + oy) * wo + ox];
          if (!grad_bias.empty()) grad_bias[oc] += go;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < kk; ++ky)
              for (std::size_t kx = 0; kx < kk; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                const std::size_t xi =
                    ((nb * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                    static_cast<std::size_t>(ix);
                const std::size_t wi = ((oc * g.in_channels + c) * kk + ky) * kk + kx;
                if (!grad_w.empty()) grad_w[wi] += go * x[xi];
                if (!grad_x.empty()) grad_x[xi] += go * w[wi];
              }
        }
}

void softmax_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = std::exp(x[r * cols + j] - mx) / s;
  }
}

}  // namespace reference

}  // namespace ckm::nd::kernels
