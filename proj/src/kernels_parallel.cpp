// OpenMP kernels. Convolutions are lowered to im2col / col2im around a
// row-parallel GEMM; each thread owns whole output rows, so there are no
// atomics or cross-thread reductions and results do not depend on the
// thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "kernel_common.hpp"
#include "msaunet/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msaunet::kernels::parallel {
namespace {

using std::ptrdiff_t;
using std::size_t;

// Range of output columns ox for which ix = ox * stride + tap - pad lands in
// [0, in). Returns an empty range (lo > hi) when nothing is valid.
struct ColumnRange {
  ptrdiff_t lo;
  ptrdiff_t hi;  // inclusive
};

ColumnRange valid_columns(size_t out, size_t in, size_t stride, size_t tap, size_t pad) {
  const auto s = static_cast<ptrdiff_t>(stride);
  const ptrdiff_t offset = static_cast<ptrdiff_t>(tap) - static_cast<ptrdiff_t>(pad);
  // ox * s + offset >= 0  ->  ox >= ceil(-offset / s)
  ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  // ox * s + offset <= in - 1
  const ptrdiff_t top = static_cast<ptrdiff_t>(in) - 1 - offset;
  ptrdiff_t hi = top < 0 ? -1 : top / s;
  hi = std::min(hi, static_cast<ptrdiff_t>(out) - 1);
  return {lo, hi};
}

}  // namespace

namespace {

// Four-lane dot product with a fixed association order.
inline double dot4(const double* a, const double* b, size_t count) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  size_t i = 0;
  for (; i + 3 < count; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < count; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void transpose(size_t rows, size_t cols, const double* src, double* dst);

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N], row-major with leading
// dimensions. Work is split over rows (and column blocks) of C, so each
// element is computed by one thread. The summation order depends only on
// the shapes: wide products stream rows of B, narrow ones (N below
// kNarrow) take dot products against a transposed copy of B.
void gemm_nn(size_t m, size_t n, size_t k, const double* a, size_t lda, const double* b, size_t ldb, double* c,
             size_t ldc, bool accumulate) {
  constexpr size_t kColBlock = 256;
  constexpr size_t kNarrow = 32;
  if (n < kNarrow) {
    std::vector<double> bt(n * k);
    for (size_t kk = 0; kk < k; ++kk) {
      for (size_t j = 0; j < n; ++j) bt[j * k + kk] = b[kk * ldb + j];
    }
    const auto rows = static_cast<ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
    for (ptrdiff_t ii = 0; ii < rows; ++ii) {
      const auto i = static_cast<size_t>(ii);
      double* crow = c + i * ldc;
      const double* arow = a + i * lda;
      for (size_t j = 0; j < n; ++j) {
        const double v = dot4(arow, bt.data() + j * k, k);
        crow[j] = accumulate ? crow[j] + v : v;
      }
    }
    return;
  }
  const size_t blocks = (n + kColBlock - 1) / kColBlock;
  const auto jobs = static_cast<ptrdiff_t>(m * blocks);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t job = 0; job < jobs; ++job) {
    const size_t i = static_cast<size_t>(job) / blocks;
    const size_t j0 = (static_cast<size_t>(job) % blocks) * kColBlock;
    const size_t j1 = std::min(n, j0 + kColBlock);
    double* crow = c + i * ldc;
    if (!accumulate) std::fill(crow + j0, crow + j1, 0.0);
    const double* arow = a + i * lda;
    for (size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * ldb;
      for (size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
    }
  }
}

// dst[cols, rows] = src[rows, cols]^T
void transpose(size_t rows, size_t cols, const double* src, double* dst) {
  const auto nr = static_cast<ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t r = 0; r < nr; ++r) {
    for (size_t c = 0; c < cols; ++c) dst[c * rows + static_cast<size_t>(r)] = src[static_cast<size_t>(r) * cols + c];
  }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

// cols[(ci * k + ky) * k + kx, oy * out_w + ox] = input[ci, iy, ix] (0 outside).
void im2col(const ConvGeometry& g, const double* input, double* cols) {
  const size_t k = g.kernel;
  const size_t out_plane = g.out_h * g.out_w;
  const auto channels = static_cast<ptrdiff_t>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto ci = static_cast<size_t>(cc);
    const double* in = input + ci * g.in_h * g.in_w;
    for (size_t ky = 0; ky < k; ++ky) {
      const auto rows = valid_columns(g.out_h, g.in_h, g.stride, ky, g.pad);
      for (size_t kx = 0; kx < k; ++kx) {
        double* dst = cols + ((ci * k + ky) * k + kx) * out_plane;
        std::fill(dst, dst + out_plane, 0.0);
        const auto span = valid_columns(g.out_w, g.in_w, g.stride, kx, g.pad);
        if (span.lo > span.hi) continue;
        const ptrdiff_t xoff = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(g.pad);
        for (ptrdiff_t oy = rows.lo; oy <= rows.hi; ++oy) {
          const ptrdiff_t iy =
              oy * static_cast<ptrdiff_t>(g.stride) + static_cast<ptrdiff_t>(ky) - static_cast<ptrdiff_t>(g.pad);
          const double* irow = in + iy * static_cast<ptrdiff_t>(g.in_w) + xoff;
          double* orow = dst + oy * static_cast<ptrdiff_t>(g.out_w);
          const auto s = static_cast<ptrdiff_t>(g.stride);
          for (ptrdiff_t ox = span.lo; ox <= span.hi; ++ox) orow[ox] = irow[ox * s];
        }
      }
    }
  }
}

// Inverse scatter of im2col: input[ci, iy, ix] = sum of the matching cols entries.
void col2im(const ConvGeometry& g, const double* cols, double* input) {
  const size_t k = g.kernel;
  const size_t out_plane = g.out_h * g.out_w;
  const auto channels = static_cast<ptrdiff_t>(g.in_channels);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto ci = static_cast<size_t>(cc);
    double* in = input + ci * g.in_h * g.in_w;
    std::fill(in, in + g.in_h * g.in_w, 0.0);
    for (size_t ky = 0; ky < k; ++ky) {
      const auto rows = valid_columns(g.out_h, g.in_h, g.stride, ky, g.pad);
      for (size_t kx = 0; kx < k; ++kx) {
        const double* src = cols + ((ci * k + ky) * k + kx) * out_plane;
        const auto span = valid_columns(g.out_w, g.in_w, g.stride, kx, g.pad);
        if (span.lo > span.hi) continue;
        const ptrdiff_t xoff = static_cast<ptrdiff_t>(kx) - static_cast<ptrdiff_t>(g.pad);
        for (ptrdiff_t oy = rows.lo; oy <= rows.hi; ++oy) {
          const ptrdiff_t iy =
              oy * static_cast<ptrdiff_t>(g.stride) + static_cast<ptrdiff_t>(ky) - static_cast<ptrdiff_t>(g.pad);
          double* irow = in + iy * static_cast<ptrdiff_t>(g.in_w) + xoff;
          const double* crow = src + oy * static_cast<ptrdiff_t>(g.out_w);
          const auto s = static_cast<ptrdiff_t>(g.stride);
          for (ptrdiff_t ox = span.lo; ox <= span.hi; ++ox) irow[ox * s] += crow[ox];
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const size_t patch = g.in_channels * g.kernel * g.kernel;
  const size_t out_plane = g.out_h * g.out_w;
  const size_t in_plane = g.in_h * g.in_w;
  std::vector<double> cols(is_pointwise(g) ? 0 : patch * out_plane);
  for (size_t n = 0; n < g.batch; ++n) {
    const double* src = input.data() + n * g.in_channels * in_plane;
    if (!is_pointwise(g)) {
      im2col(g, src, cols.data());
      src = cols.data();
    }
    double* out = output.data() + n * g.out_channels * out_plane;
    for (size_t co = 0; co < g.out_channels; ++co) {
      std::fill(out + co * out_plane, out + (co + 1) * out_plane, bias.empty() ? 0.0 : bias[co]);
    }
    gemm_nn(g.out_channels, out_plane, patch, weight.data(), patch, src, out_plane, out, out_plane, true);
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const size_t patch = g.in_channels * g.kernel * g.kernel;
  const size_t out_plane = g.out_h * g.out_w;
  const size_t in_plane = g.in_h * g.in_w;
  std::vector<double> weight_t(patch * g.out_channels);
  transpose(g.out_channels, patch, weight.data(), weight_t.data());
  std::vector<double> cols(is_pointwise(g) ? 0 : patch * out_plane);
  for (size_t n = 0; n < g.batch; ++n) {
    const double* dy = grad_output.data() + n * g.out_channels * out_plane;
    double* dx = grad_input.data() + n * g.in_channels * in_plane;
    if (is_pointwise(g)) {
      gemm_nn(patch, out_plane, g.out_channels, weight_t.data(), g.out_channels, dy, out_plane, dx, out_plane, false);
    } else {
      gemm_nn(patch, out_plane, g.out_channels, weight_t.data(), g.out_channels, dy, out_plane, cols.data(),
              out_plane, false);
      col2im(g, cols.data(), dx);
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const size_t patch = g.in_channels * g.kernel * g.kernel;
  const size_t out_plane = g.out_h * g.out_w;
  const size_t in_plane = g.in_h * g.in_w;
  std::vector<double> cols(is_pointwise(g) ? 0 : patch * out_plane);
  std::vector<double> cols_t(patch * out_plane);
  for (size_t n = 0; n < g.batch; ++n) {
    const double* src = input.data() + n * g.in_channels * in_plane;
    if (!is_pointwise(g)) {
      im2col(g, src, cols.data());
      src = cols.data();
    }
    transpose(patch, out_plane, src, cols_t.data());
    const double* dy = grad_output.data() + n * g.out_channels * out_plane;
    gemm_nn(g.out_channels, patch, out_plane, dy, out_plane, cols_t.data(), patch, grad_weight.data(), patch, n > 0);
  }

  if (grad_bias.empty()) return;
  const auto channels = static_cast<ptrdiff_t>(g.out_channels);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t co = 0; co < channels; ++co) {
    double acc = 0.0;
    for (size_t n = 0; n < g.batch; ++n) {
      const double* gout = grad_output.data() + (n * g.out_channels + static_cast<size_t>(co)) * out_plane;
      for (size_t i = 0; i < out_plane; ++i) acc += gout[i];
    }
    grad_bias[static_cast<size_t>(co)] = acc;
  }
}

void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                             std::size_t out_w, std::span<const double> input, std::span<double> output) {
  if (in_h == out_h && in_w == out_w) {
    std::copy(input.begin(), input.end(), output.begin());
    return;
  }
  std::vector<detail::LerpTap> xs(out_w);
  for (size_t ox = 0; ox < out_w; ++ox) xs[ox] = detail::corner_aligned_tap(ox, in_w, out_w);
  const auto np = static_cast<ptrdiff_t>(planes);

#pragma omp parallel for schedule(static)
  for (ptrdiff_t p = 0; p < np; ++p) {
    const double* src = input.data() + static_cast<size_t>(p) * in_h * in_w;
    double* dst = output.data() + static_cast<size_t>(p) * out_h * out_w;
    for (size_t oy = 0; oy < out_h; ++oy) {
      const auto ty = detail::corner_aligned_tap(oy, in_h, out_h);
      const double* r0 = src + ty.lo * in_w;
      const double* r1 = src + ty.hi * in_w;
      for (size_t ox = 0; ox < out_w; ++ox) {
        const auto& tx = xs[ox];
        if (ty.frac == 0.0 && tx.frac == 0.0) {
          dst[oy * out_w + ox] = r0[tx.lo];
          continue;
        }
        const double top = (1.0 - tx.frac) * r0[tx.lo] + tx.frac * r0[tx.hi];
        const double bot = (1.0 - tx.frac) * r1[tx.lo] + tx.frac * r1[tx.hi];
        dst[oy * out_w + ox] = (1.0 - ty.frac) * top + ty.frac * bot;
      }
    }
  }
}

void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<const double> grad_output, std::span<double> grad_input) {
  if (in_h == out_h && in_w == out_w) {
    std::copy(grad_output.begin(), grad_output.end(), grad_input.begin());
    return;
  }
  std::vector<detail::LerpTap> xs(out_w);
  for (size_t ox = 0; ox < out_w; ++ox) xs[ox] = detail::corner_aligned_tap(ox, in_w, out_w);
  const auto np = static_cast<ptrdiff_t>(planes);

#pragma omp parallel for schedule(static)
  for (ptrdiff_t p = 0; p < np; ++p) {
    const double* go = grad_output.data() + static_cast<size_t>(p) * out_h * out_w;
    double* gi = grad_input.data() + static_cast<size_t>(p) * in_h * in_w;
    std::fill(gi, gi + in_h * in_w, 0.0);
    for (size_t oy = 0; oy < out_h; ++oy) {
      const auto ty = detail::corner_aligned_tap(oy, in_h, out_h);
      for (size_t ox = 0; ox < out_w; ++ox) {
        const auto& tx = xs[ox];
        const double gv = go[oy * out_w + ox];
        gi[ty.lo * in_w + tx.lo] += (1.0 - ty.frac) * (1.0 - tx.frac) * gv;
        gi[ty.lo * in_w + tx.hi] += (1.0 - ty.frac) * tx.frac * gv;
        gi[ty.hi * in_w + tx.lo] += ty.frac * (1.0 - tx.frac) * gv;
        gi[ty.hi * in_w + tx.hi] += ty.frac * tx.frac * gv;
      }
    }
  }
}

void channel_moments(const NormGeometry& g, std::span<const double> input, std::span<double> mean,
                     std::span<double> var) {
  const double count = static_cast<double>(g.batch * g.plane);
  const auto channels = static_cast<ptrdiff_t>(g.channels);

#pragma omp parallel for schedule(static)
  for (ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<size_t>(cc);
    double sum = 0.0;
    for (size_t n = 0; n < g.batch; ++n) {
      const double* x = input.data() + (n * g.channels + c) * g.plane;
      for (size_t i = 0; i < g.plane; ++i) sum += x[i];
    }
    const double m = sum / count;
    double sq = 0.0;
    for (size_t n = 0; n < g.batch; ++n) {
      const double* x = input.data() + (n * g.channels + c) * g.plane;
      for (size_t i = 0; i < g.plane; ++i) {
        const double d = x[i] - m;
        sq += d * d;
      }
    }
    mean[c] = m;
    var[c] = sq / count;
  }
}

void normalize_affine(const NormGeometry& g, std::span<const double> input, std::span<const double> mean,
                      std::span<const double> inv_std, std::span<const double> gamma, std::span<const double> beta,
                      std::span<double> output) {
  const auto jobs = static_cast<ptrdiff_t>(g.batch * g.channels);

#pragma omp parallel for schedule(static)
  for (ptrdiff_t job = 0; job < jobs; ++job) {
    const size_t c = static_cast<size_t>(job) % g.channels;
    const double* x = input.data() + static_cast<size_t>(job) * g.plane;
    double* y = output.data() + static_cast<size_t>(job) * g.plane;
    const double m = mean[c], is = inv_std[c], ga = gamma[c], be = beta[c];
    for (size_t i = 0; i < g.plane; ++i) y[i] = ga * ((x[i] - m) * is) + be;
  }
}

void batch_norm_backward(const NormGeometry& g, std::span<const double> input, std::span<const double> grad_output,
                         std::span<const double> mean, std::span<const double> inv_std,
                         std::span<const double> gamma, std::span<double> grad_input, std::span<double> grad_gamma,
                         std::span<double> grad_beta) {
  const double count = static_cast<double>(g.batch * g.plane);
  const auto channels = static_cast<ptrdiff_t>(g.channels);

#pragma omp parallel for schedule(static)
  for (ptrdiff_t cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<size_t>(cc);
    const double m = mean[c], is = inv_std[c];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (size_t n = 0; n < g.batch; ++n) {
      const double* x = input.data() + (n * g.channels + c) * g.plane;
      const double* dy = grad_output.data() + (n * g.channels + c) * g.plane;
      for (size_t i = 0; i < g.plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - m) * is;
      }
    }
    grad_beta[c] = sum_dy;
    grad_gamma[c] = sum_dy_xhat;
    const double scale = gamma[c] * is / count;
    for (size_t n = 0; n < g.batch; ++n) {
      const double* x = input.data() + (n * g.channels + c) * g.plane;
      const double* dy = grad_output.data() + (n * g.channels + c) * g.plane;
      double* dx = grad_input.data() + (n * g.channels + c) * g.plane;
      for (size_t i = 0; i < g.plane; ++i) {
        const double xhat = (x[i] - m) * is;
        dx[i] = scale * (count * dy[i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

}  // namespace msaunet::kernels::parallel
