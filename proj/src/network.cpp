#include "msaunet/network.hpp"

#include "msaunet/errors.hpp"

namespace msaunet {

void MsauNetConfig::validate() const {
  encoder.validate();
  for (std::size_t i = 0; i < decoder_channels.size(); ++i) {
    if (decoder_channels[i] < 1) throw InvalidSpecError("decoder_channels entries must be >= 1");
    if (i > 0 && decoder_channels[i] >= decoder_channels[i - 1]) {
      throw InvalidSpecError("decoder_channels must be strictly decreasing");
    }
  }
  if (num_classes < 2) throw InvalidSpecError("num_classes must be >= 2");
  if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw InvalidSpecError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                           " is not a multiple of 32");
  }
}

nn::ParameterTable MsauNetState::parameters() const {
  nn::ParameterTable t = encoder.parameters();
  for (std::size_t i = 0; i < msab.size(); ++i) t.add("msab" + std::to_string(i + 1) + ".", msab[i].parameters());
  for (std::size_t i = 0; i < ab.size(); ++i) t.add("ab" + std::to_string(i + 1) + ".", ab[i].parameters());
  t.add("head.", head.parameters());
  return t;
}

MsauNetState build_network(const MsauNetConfig& config, std::uint64_t seed) {
  config.validate();
  MsauNetState m;
  m.config = config;
  m.encoder = build_encoder(config.encoder, seed);
  // Decoder weights draw from a stream distinct from the encoder's.
  nn::InitRng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::size_t ch = config.encoder.bottleneck_channels();
  for (std::size_t i = 0; i < 3; ++i) {
    m.msab[i] = MsabParams::make(ch, config.encoder.skip_channels(i), config.decoder_channels[i], rng);
    ch = config.decoder_channels[i];
  }
  for (std::size_t i = 0; i < 2; ++i) {
    m.ab[i] = AbParams::make(ch, config.encoder.skip_channels(3 + i), config.decoder_channels[3 + i], rng);
    ch = config.decoder_channels[3 + i];
  }
  m.head = nn::Conv2d::make(ch, config.num_classes, 1, 1, 0, true, rng);
  return m;
}

ag::Var forward(const ag::Var& image, const MsauNetState& model, nn::Mode mode, Trace* trace) {
  const auto& v = image.value();
  if (v.rank() == 4 && (v.height() != model.config.input_h || v.width() != model.config.input_w)) {
    throw DimensionError("forward: image is " + std::to_string(v.height()) + "x" + std::to_string(v.width()) +
                         ", model expects " + std::to_string(model.config.input_h) + "x" +
                         std::to_string(model.config.input_w));
  }
  const FeaturePyramid pyramid = encode(image, model.encoder, mode, trace);

  ag::Var x = pyramid.bottleneck;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "msab" + std::to_string(i + 1);
    const auto& skip = *pyramid.skips[i];
    if (trace) trace->record(name, std::string("skip:") + kStageLabels[kEncoderStages - 2 - i], skip.shape());
    x = msab_forward(x, skip, model.msab[i], mode, trace, name);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t slot = 3 + i;
    const std::string name = "ab" + std::to_string(i + 1);
    const auto& skip = pyramid.skips[slot];
    if (trace) {
      if (skip) {
        trace->record(name, std::string("skip:") + kStageLabels[kEncoderStages - 2 - slot], skip->shape());
      } else {
        trace->record(name, "skip:none", {});
      }
    }
    x = ab_forward(x, skip, model.ab[i], mode, trace, name);
  }
  ag::Var logits = model.head.forward(x);
  if (trace) trace->record("head", "output", logits.shape());
  return logits;
}

std::vector<ClassMask> predict_masks(const Tensor& logits) {
  if (logits.rank() != 4) throw ShapeError("predict_mask: logits must be NCHW");
  const std::size_t n = logits.batch(), classes = logits.channels(), plane = logits.plane();
  std::vector<ClassMask> masks;
  masks.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    ClassMask mask(logits.height(), logits.width(), classes);
    const double* base = logits.data() + b * classes * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      double best_v = base[i];
      for (std::size_t c = 1; c < classes; ++c) {
        if (base[c * plane + i] > best_v) {
          best_v = base[c * plane + i];
          best = c;
        }
      }
      mask.labels[i] = static_cast<std::int32_t>(best);
    }
    masks.push_back(std::move(mask));
  }
  return masks;
}

ClassMask predict_mask(const Tensor& logits) {
  if (logits.rank() != 4 || logits.batch() != 1) throw ShapeError("predict_mask: expected a batch of one");
  return std::move(predict_masks(logits).front());
}

}  // namespace msaunet
