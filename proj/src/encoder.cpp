#include "msaunet/encoder.hpp"

#include "msaunet/errors.hpp"

namespace msaunet {

void EncoderSpec::validate() const {
  if (stage_channels.size() != kEncoderStages) {
    throw InvalidSpecError("encoder '" + name + "': stage_channels needs " + std::to_string(kEncoderStages) +
                           " entries, got " + std::to_string(stage_channels.size()));
  }
  if (stage_strides.size() != kEncoderStages) {
    throw InvalidSpecError("encoder '" + name + "': stage_strides needs " + std::to_string(kEncoderStages) +
                           " entries, got " + std::to_string(stage_strides.size()));
  }
  for (std::size_t i = 0; i < kEncoderStages; ++i) {
    if (stage_channels[i] < 1) {
      throw InvalidSpecError("encoder '" + name + "': stage " + std::to_string(i) + " has zero channels");
    }
    if (stage_strides[i] < 1) {
      throw InvalidSpecError("encoder '" + name + "': stage " + std::to_string(i) + " has zero stride");
    }
    if (i > 0) {
      if (stage_strides[i] <= stage_strides[i - 1]) {
        throw InvalidSpecError("encoder '" + name + "': stage_strides must be strictly increasing");
      }
      if (stage_strides[i] % stage_strides[i - 1] != 0) {
        throw InvalidSpecError("encoder '" + name + "': stride " + std::to_string(stage_strides[i]) +
                               " is not a multiple of " + std::to_string(stage_strides[i - 1]));
      }
    }
  }
  if (stage_strides.back() != 32) {
    throw InvalidSpecError("encoder '" + name + "': final stride must be 32, got " +
                           std::to_string(stage_strides.back()));
  }
  // Skip slot i must sit at exactly 2^(i+1) times the bottleneck resolution.
  for (std::size_t level = 1; level + 1 < kEncoderStages; ++level) {
    const std::size_t slot = kEncoderStages - 2 - level;
    if (stage_strides[level] * (std::size_t{2} << slot) != 32) {
      throw InvalidSpecError("encoder '" + name + "': stage " + std::to_string(level) + " stride " +
                             std::to_string(stage_strides[level]) + " does not line up with its decoder skip");
    }
  }
}

std::size_t EncoderSpec::skip_channels(std::size_t slot) const {
  if (slot + 1 >= kSkipSlots) return 0;
  return stage_channels[kEncoderStages - 2 - slot];
}

EncoderSpec EncoderSpec::tiny() { return {"tiny", {16, 16, 32, 64, 128, 256}, {1, 2, 4, 8, 16, 32}}; }

EncoderSpec EncoderSpec::densenet_shaped() {
  return {"densenet169", {32, 64, 256, 512, 1280, 2208}, {1, 2, 4, 8, 16, 32}};
}

nn::ParameterTable EncoderState::parameters() const {
  nn::ParameterTable t;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string prefix = std::string("encoder.") + kStageLabels[i] + ".";
    t.add(prefix + "conv.", stages[i].conv.parameters());
    t.add(prefix + "norm.", stages[i].norm.parameters());
  }
  return t;
}

EncoderState build_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  nn::InitRng rng(seed);
  EncoderState state;
  state.spec = spec;
  std::size_t in_channels = 3;
  std::size_t prev_stride = 1;
  for (std::size_t i = 0; i < kEncoderStages; ++i) {
    const std::size_t stride = spec.stage_strides[i] / prev_stride;
    EncoderState::Stage stage{nn::Conv2d::make(in_channels, spec.stage_channels[i], 3, stride, 1, false, rng),
                              nn::BatchNorm2d::make(spec.stage_channels[i])};
    state.stages.push_back(std::move(stage));
    in_channels = spec.stage_channels[i];
    prev_stride = spec.stage_strides[i];
  }
  return state;
}

FeaturePyramid encode(const ag::Var& image, const EncoderState& encoder, nn::Mode mode, Trace* trace) {
  const auto& v = image.value();
  if (v.rank() != 4) throw DimensionError("encode: expected an NCHW image batch");
  if (v.channels() != 3) {
    throw ChannelError("encode: expected 3 input channels, got " + std::to_string(v.channels()));
  }
  if (v.height() == 0 || v.width() == 0 || v.height() % 32 != 0 || v.width() % 32 != 0) {
    throw DimensionError("encode: input " + std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                         " is not a multiple of 32");
  }

  std::array<ag::Var, kEncoderStages> levels;
  ag::Var x = image;
  for (std::size_t i = 0; i < encoder.stages.size(); ++i) {
    const auto& stage = encoder.stages[i];
    x = ag::leaky_relu(stage.norm.forward(stage.conv.forward(x), mode), nn::kLeakySlope);
    levels[i] = x;
    if (trace) trace->record("encoder", kStageLabels[i], x.shape());
  }

  FeaturePyramid pyramid;
  pyramid.bottleneck = levels[kEncoderStages - 1];
  for (std::size_t slot = 0; slot + 1 < kSkipSlots; ++slot) pyramid.skips[slot] = levels[kEncoderStages - 2 - slot];
  return pyramid;
}

}  // namespace msaunet
