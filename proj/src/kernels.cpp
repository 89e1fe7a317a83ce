#include "msaunet/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msaunet::kernels {
namespace {
std::atomic<Backend> g_backend{Backend::Parallel};
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in == 0 || (in - 1) * stride + kernel < 2 * pad) return 0;
  return (in - 1) * stride + kernel - 2 * pad;
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define MSAUNET_DISPATCH(fn, ...)          \
  if (backend() == Backend::Serial) {      \
    serial::fn(__VA_ARGS__);               \
  } else {                                 \
    parallel::fn(__VA_ARGS__);             \
  }

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output) {
  MSAUNET_DISPATCH(conv2d_forward, g, input, weight, bias, output)
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  MSAUNET_DISPATCH(conv2d_backward_input, g, grad_output, weight, grad_input)
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  MSAUNET_DISPATCH(conv2d_backward_weight, g, input, grad_output, grad_weight, grad_bias)
}

void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                             std::size_t out_w, std::span<const double> input, std::span<double> output) {
  MSAUNET_DISPATCH(resize_bilinear_forward, planes, in_h, in_w, out_h, out_w, input, output)
}

void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<const double> grad_output, std::span<double> grad_input) {
  MSAUNET_DISPATCH(resize_bilinear_backward, planes, in_h, in_w, out_h, out_w, grad_output, grad_input)
}

void channel_moments(const NormGeometry& g, std::span<const double> input, std::span<double> mean,
                     std::span<double> var) {
  MSAUNET_DISPATCH(channel_moments, g, input, mean, var)
}

void normalize_affine(const NormGeometry& g, std::span<const double> input, std::span<const double> mean,
                      std::span<const double> inv_std, std::span<const double> gamma, std::span<const double> beta,
                      std::span<double> output) {
  MSAUNET_DISPATCH(normalize_affine, g, input, mean, inv_std, gamma, beta, output)
}

void batch_norm_backward(const NormGeometry& g, std::span<const double> input, std::span<const double> grad_output,
                         std::span<const double> mean, std::span<const double> inv_std,
                         std::span<const double> gamma, std::span<double> grad_input, std::span<double> grad_gamma,
                         std::span<double> grad_beta) {
  MSAUNET_DISPATCH(batch_norm_backward, g, input, grad_output, mean, inv_std, gamma, grad_input, grad_gamma,
                   grad_beta)
}

#undef MSAUNET_DISPATCH

}  // namespace msaunet::kernels
