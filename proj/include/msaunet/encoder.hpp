#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msaunet/autograd.hpp"
#include "msaunet/layers.hpp"
#include "msaunet/types.hpp"

namespace msaunet {

// Feature levels of the contracting path, shallowest first. Level 0 is the
// full-resolution stem; levels 1-4 feed decoder skips; level 5 is the
// bottleneck handed to the first decoder block.
inline constexpr std::size_t kEncoderStages = 6;
inline constexpr std::size_t kSkipSlots = 5;
inline constexpr std::array<const char*, kEncoderStages> kStageLabels = {
    "stem", "relu0", "denseblock1", "denseblock2", "denseblock3", "denseblock4"};

struct EncoderSpec {
  std::string name;
  std::vector<std::size_t> stage_channels;  // 6 entries, last is the bottleneck
  std::vector<std::size_t> stage_strides;   // cumulative downsampling, strictly increasing, ends at 32

  // Throws InvalidSpecError describing the first violated invariant.
  void validate() const;

  std::size_t bottleneck_channels() const { return stage_channels.back(); }
  // Channel count of skip slot i (0 = deepest); 0 for the absent slot.
  std::size_t skip_channels(std::size_t slot) const;

  // Stride-2 conv/BN/leaky stack, 16-16-32-64-128-256 channels.
  static EncoderSpec tiny();
  // Channel and stride geometry of the DenseNet feature taps the decoder
  // consumes, ending in a 2208-channel stride-32 bottleneck.
  static EncoderSpec densenet_shaped();
};

// Convolution stages of the contracting path. Immutable after build apart
// from batch-norm running statistics, which only the trainer updates.
struct EncoderState {
  struct Stage {
    nn::Conv2d conv;  // 3x3, pad 1, stride = ratio of consecutive cumulative strides
    nn::BatchNorm2d norm;
  };

  EncoderSpec spec;
  std::vector<Stage> stages;

  nn::ParameterTable parameters() const;
};

struct FeaturePyramid {
  ag::Var bottleneck;
  // skips[0] is the deepest skip (fed to the first decoder block); the
  // shallowest slot is always empty.
  std::array<std::optional<ag::Var>, kSkipSlots> skips;
};

EncoderState build_encoder(const EncoderSpec& spec, std::uint64_t seed);

// image: [n, 3, H, W] with H and W multiples of 32.
FeaturePyramid encode(const ag::Var& image, const EncoderState& encoder, nn::Mode mode = nn::Mode::Eval,
                      Trace* trace = nullptr);

}  // namespace msaunet
