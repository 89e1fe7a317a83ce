#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>

#include "msaunet/attention_gate.hpp"
#include "msaunet/autograd.hpp"
#include "msaunet/layers.hpp"
#include "msaunet/types.hpp"

namespace msaunet {

// Kernel sizes of the three multi-scale upsampling branches.
inline constexpr std::array<std::size_t, 3> kMsabKernels = {2, 4, 6};

// Padding that makes a stride-2 transposed convolution exactly double its
// input: 0, 1, 2 for kernels 2, 4, 6.
std::size_t upsample_padding(std::size_t kernel);

// Stride-2 transposed convolution restricted to kernels {2, 4, 6}; throws
// UnsupportedError otherwise. weight [in, out, k, k].
ag::Var transposed_conv2x(const ag::Var& input, const ag::Var& weight, const ag::Var& bias, std::size_t kernel);

// Corner-aligned bilinear resampling; resampling to the input's own size is
// the identity.
ag::Var bilinear_resample(const ag::Var& input, std::size_t target_h, std::size_t target_w);

// Multi-scale attention upsampling block.
struct MsabParams {
  std::size_t ch_in = 0;
  std::size_t ch_skip = 0;
  std::size_t ch_out = 0;
  std::array<nn::ConvTranspose2d, 3> up;      // kernels 2, 4, 6; ch_in -> ch_out
  std::array<nn::Conv2d, 3> branch_proj;      // 1x1, (ch_out + ch_skip) -> ch_out
  nn::Conv2d fuse;                            // 1x1, 3 * ch_out -> ch_out
  nn::BatchNorm2d norm;
  AttentionGateParams gate;                   // gating = x, skip = y

  static MsabParams make(std::size_t ch_in, std::size_t ch_skip, std::size_t ch_out, nn::InitRng& rng);
  void validate() const;
  nn::ParameterTable parameters() const;
};

// Single-scale attention upsampling block; plain upsampling when built
// without a skip.
struct AbParams {
  std::size_t ch_in = 0;
  std::size_t ch_skip = 0;  // 0 when the block has no skip input
  std::size_t ch_out = 0;
  nn::ConvTranspose2d up;   // kernel 4
  nn::Conv2d fuse;          // 1x1, (ch_out + ch_skip) -> ch_out, or ch_out -> ch_out without a gate
  nn::BatchNorm2d norm;
  std::optional<AttentionGateParams> gate;

  static AbParams make(std::size_t ch_in, std::size_t ch_skip, std::size_t ch_out, nn::InitRng& rng);
  void validate() const;
  nn::ParameterTable parameters() const;
};

// x [n, ch_in, h, w], skip [n, ch_skip, 2h, 2w] -> [n, ch_out, 2h, 2w].
// With a trace, records "branch{1,2,3}", "prefuse" and "output" shapes under `name`.
ag::Var msab_forward(const ag::Var& x, const ag::Var& skip, const MsabParams& params, nn::Mode mode,
                     Trace* trace = nullptr, const std::string& name = "msab");

ag::Var ab_forward(const ag::Var& x, const std::optional<ag::Var>& skip, const AbParams& params, nn::Mode mode,
                   Trace* trace = nullptr, const std::string& name = "ab");

}  // namespace msaunet
