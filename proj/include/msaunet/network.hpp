#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "msaunet/decoder_blocks.hpp"
#include "msaunet/encoder.hpp"
#include "msaunet/layers.hpp"
#include "msaunet/types.hpp"

namespace msaunet {

struct MsauNetConfig {
  EncoderSpec encoder = EncoderSpec::densenet_shaped();
  std::array<std::size_t, 5> decoder_channels = {256, 128, 64, 32, 16};
  std::size_t num_classes = 21;
  std::size_t input_h = 224;
  std::size_t input_w = 224;

  void validate() const;
};

// Encoder, three multi-scale blocks, two single-scale blocks and a 1x1
// classifier head producing raw logits.
struct MsauNetState {
  MsauNetConfig config;
  EncoderState encoder;
  std::array<MsabParams, 3> msab;
  std::array<AbParams, 2> ab;
  nn::Conv2d head;  // 1x1, decoder_channels.back() -> num_classes

  // Stable, ordered names for every parameter and buffer; the checkpoint
  // format and the optimizer both walk this table.
  nn::ParameterTable parameters() const;
};

MsauNetState build_network(const MsauNetConfig& config, std::uint64_t seed);

// image [n, 3, H, W] matching the configured input size -> logits [n, N, H, W].
// A trace receives encoder stage shapes and every decoder block's shapes
// ("msab1".."msab3", "ab1", "ab2", "head"), including which skip each
// block consumed.
ag::Var forward(const ag::Var& image, const MsauNetState& model, nn::Mode mode = nn::Mode::Eval,
                Trace* trace = nullptr);

// Per-pixel argmax over classes; ties resolve to the lowest class index.
// logits must be a batch of one.
ClassMask predict_mask(const Tensor& logits);
std::vector<ClassMask> predict_masks(const Tensor& logits);

}  // namespace msaunet
