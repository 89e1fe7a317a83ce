// Reference kernels: one output element at a time, straight from the
// defining sums. Slow, but each loop nest reads like the formula it computes.

#include <cmath>

#include "kernel_common.hpp"
#include "msaunet/kernels.hpp"

namespace msaunet::kernels::serial {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  const auto k = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto ix =
                    static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                acc += weight[((co * g.in_channels + ci) * k + ky) * k + kx] *
                       input[((n * g.in_channels + ci) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                             static_cast<std::size_t>(ix)];
              }
            }
          }
          output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const auto k = g.kernel;
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t iy = 0; iy < g.in_h; ++iy) {
        for (std::size_t ix = 0; ix < g.in_w; ++ix) {
          double acc = 0.0;
          for (std::size_t co = 0; co < g.out_channels; ++co) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const auto ty = static_cast<std::ptrdiff_t>(iy + g.pad) - static_cast<std::ptrdiff_t>(ky);
              if (ty < 0 || ty % s != 0 || ty / s >= static_cast<std::ptrdiff_t>(g.out_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto tx = static_cast<std::ptrdiff_t>(ix + g.pad) - static_cast<std::ptrdiff_t>(kx);
                if (tx < 0 || tx % s != 0 || tx / s >= static_cast<std::ptrdiff_t>(g.out_w)) continue;
                acc += weight[((co * g.in_channels + ci) * k + ky) * k + kx] *
                       grad_output[((n * g.out_channels + co) * g.out_h + static_cast<std::size_t>(ty / s)) *
                                       g.out_w +
                                   static_cast<std::size_t>(tx / s)];
              }
            }
          }
          grad_input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] = acc;
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const auto k = g.kernel;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n) {
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const auto ix =
                    static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                acc += grad_output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] *
                       input[((n * g.in_channels + ci) * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                             static_cast<std::size_t>(ix)];
              }
            }
          }
          grad_weight[((co * g.in_channels + ci) * k + ky) * k + kx] = acc;
        }
      }
    }
  }
  if (grad_bias.empty()) return;
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    double acc = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t i = 0; i < g.out_h * g.out_w; ++i) {
        acc += grad_output[(n * g.out_channels + co) * g.out_h * g.out_w + i];
      }
    }
    grad_bias[co] = acc;
  }
}

void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                             std::size_t out_w, std::span<const double> input, std::span<double> output) {
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.data() + p * in_h * in_w;
    double* dst = output.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto ty = detail::corner_aligned_tap(oy, in_h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto tx = detail::corner_aligned_tap(ox, in_w, out_w);
        if (ty.frac == 0.0 && tx.frac == 0.0) {
          dst[oy * out_w + ox] = src[ty.lo * in_w + tx.lo];
          continue;
        }
        const double top = (1.0 - tx.frac) * src[ty.lo * in_w + tx.lo] + tx.frac * src[ty.lo * in_w + tx.hi];
        const double bot = (1.0 - tx.frac) * src[ty.hi * in_w + tx.lo] + tx.frac * src[ty.hi * in_w + tx.hi];
        dst[oy * out_w + ox] = (1.0 - ty.frac) * top + ty.frac * bot;
      }
    }
  }
}

void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<const double> grad_output, std::span<double> grad_input) {
  for (auto& v : grad_input) v = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* go = grad_output.data() + p * out_h * out_w;
    double* gi = grad_input.data() + p * in_h * in_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto ty = detail::corner_aligned_tap(oy, in_h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto tx = detail::corner_aligned_tap(ox, in_w, out_w);
        const double g = go[oy * out_w + ox];
        gi[ty.lo * in_w + tx.lo] += (1.0 - ty.frac) * (1.0 - tx.frac) * g;
        gi[ty.lo * in_w + tx.hi] += (1.0 - ty.frac) * tx.frac * g;
        gi[ty.hi * in_w + tx.lo] += ty.frac * (1.0 - tx.frac) * g;
        gi[ty.hi * in_w + tx.hi] += ty.frac * tx.frac * g;
      }
    }
  }
}

void channel_moments(const NormGeometry& g, std::span<const double> input, std::span<double> mean,
                     std::span<double> var) {
  const double count = static_cast<double>(g.batch * g.plane);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t i = 0; i < g.plane; ++i) sum += input[(n * g.channels + c) * g.plane + i];
    }
    const double m = sum / count;
    double sq = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t i = 0; i < g.plane; ++i) {
        const double d = input[(n * g.channels + c) * g.plane + i] - m;
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
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t i = 0; i < g.plane; ++i) {
        const auto idx = (n * g.channels + c) * g.plane + i;
        output[idx] = gamma[c] * ((input[idx] - mean[c]) * inv_std[c]) + beta[c];
      }
    }
  }
}

void batch_norm_backward(const NormGeometry& g, std::span<const double> input, std::span<const double> grad_output,
                         std::span<const double> mean, std::span<const double> inv_std,
                         std::span<const double> gamma, std::span<double> grad_input, std::span<double> grad_gamma,
                         std::span<double> grad_beta) {
  const double count = static_cast<double>(g.batch * g.plane);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t i = 0; i < g.plane; ++i) {
        const auto idx = (n * g.channels + c) * g.plane + i;
        sum_dy += grad_output[idx];
        sum_dy_xhat += grad_output[idx] * (input[idx] - mean[c]) * inv_std[c];
      }
    }
    grad_beta[c] = sum_dy;
    grad_gamma[c] = sum_dy_xhat;
    const double scale = gamma[c] * inv_std[c] / count;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t i = 0; i < g.plane; ++i) {
        const auto idx = (n * g.channels + c) * g.plane + i;
        const double xhat = (input[idx] - mean[c]) * inv_std[c];
        grad_input[idx] = scale * (count * grad_output[idx] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  }
}

}  // namespace msaunet::kernels::serial
