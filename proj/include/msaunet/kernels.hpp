#pragma once

#include <cstddef>
#include <span>

// Compute kernels behind every convolution, resampling and normalization op.
//
// Two implementations share each signature:
//   serial::   direct per-output-element formulas, kept as the reference
//   parallel:: loop-reordered OpenMP kernels used for real work
// Every parallel kernel partitions its outputs so that each element is
// produced by exactly one thread in a fixed summation order; results are
// therefore reproducible run to run regardless of thread count.
//
// All kernels overwrite their output spans.
namespace msaunet::kernels {

// Geometry of a square-kernel 2D convolution over an NCHW batch.
// out = (in + 2*pad - kernel) / stride + 1 must hold in both axes.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t out_h = 1;
  std::size_t out_w = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h * out_w; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

// Output extent of a convolution, or 0 when the geometry does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Output extent of a transposed convolution: (in - 1) * stride - 2 * pad + kernel.
std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

// Batch-norm geometry: statistics are per channel over (batch, h, w).
struct NormGeometry {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t plane = 1;
};

#define MSAUNET_KERNEL_DECLS                                                                                 \
  /* weight [out, in, k, k]; bias may be empty */                                                            \
  void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,  \
                      std::span<const double> bias, std::span<double> output);                               \
  /* gradient of the conv output w.r.t. its input */                                                         \
  void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,                     \
                             std::span<const double> weight, std::span<double> grad_input);                  \
  /* gradient w.r.t. weight and (when non-empty) bias */                                                     \
  void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,                          \
                              std::span<const double> grad_output, std::span<double> grad_weight,            \
                              std::span<double> grad_bias);                                                  \
  /* corner-aligned bilinear resampling of `planes` independent h x w planes */                              \
  void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,    \
                               std::size_t out_w, std::span<const double> input, std::span<double> output);  \
  void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,   \
                                std::size_t out_w, std::span<const double> grad_output,                      \
                                std::span<double> grad_input);                                               \
  /* per-channel mean and biased variance */                                                                 \
  void channel_moments(const NormGeometry& g, std::span<const double> input, std::span<double> mean,         \
                       std::span<double> var);                                                               \
  /* y = gamma * (x - mean) * inv_std + beta */                                                              \
  void normalize_affine(const NormGeometry& g, std::span<const double> input, std::span<const double> mean,  \
                        std::span<const double> inv_std, std::span<const double> gamma,                      \
                        std::span<const double> beta, std::span<double> output);                             \
  /* training-mode batch-norm backward: writes dx, dgamma, dbeta */                                          \
  void batch_norm_backward(const NormGeometry& g, std::span<const double> input,                             \
                           std::span<const double> grad_output, std::span<const double> mean,                \
                           std::span<const double> inv_std, std::span<const double> gamma,                   \
                           std::span<double> grad_input, std::span<double> grad_gamma,                       \
                           std::span<double> grad_beta);

namespace serial {
MSAUNET_KERNEL_DECLS
}  // namespace serial

namespace parallel {
MSAUNET_KERNEL_DECLS
}  // namespace parallel

#undef MSAUNET_KERNEL_DECLS

enum class Backend { Serial, Parallel };

// Process-wide backend used by the dispatching functions below. Defaults to
// Parallel. Not meant to be flipped while a forward pass is running.
void set_backend(Backend b);
Backend backend();

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_weight,
                            std::span<double> grad_bias);
void resize_bilinear_forward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                             std::size_t out_w, std::span<const double> input, std::span<double> output);
void resize_bilinear_backward(std::size_t planes, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<const double> grad_output, std::span<double> grad_input);
void channel_moments(const NormGeometry& g, std::span<const double> input, std::span<double> mean,
                     std::span<double> var);
void normalize_affine(const NormGeometry& g, std::span<const double> input, std::span<const double> mean,
                      std::span<const double> inv_std, std::span<const double> gamma, std::span<const double> beta,
                      std::span<double> output);
void batch_norm_backward(const NormGeometry& g, std::span<const double> input, std::span<const double> grad_output,
                         std::span<const double> mean, std::span<const double> inv_std,
                         std::span<const double> gamma, std::span<double> grad_input, std::span<double> grad_gamma,
                         std::span<double> grad_beta);

}  // namespace msaunet::kernels
