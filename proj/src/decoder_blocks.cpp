#include "msaunet/decoder_blocks.hpp"

#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

void check_upsample_pair(const ag::Var& x, const ag::Var& skip, const char* block) {
  const auto& xv = x.value();
  const auto& sv = skip.value();
  if (xv.rank() != 4 || sv.rank() != 4) throw ShapeError(std::string(block) + ": expected NCHW inputs");
  if (xv.batch() != sv.batch() || sv.height() != 2 * xv.height() || sv.width() != 2 * xv.width()) {
    throw ShapeError(std::string(block) + ": skip " + shape_string(sv.shape()) + " is not twice the input " +
                     shape_string(xv.shape()));
  }
}

void check_channels(const ag::Var& v, std::size_t expected, const char* block, const char* what) {
  if (v.value().rank() != 4 || v.value().channels() != expected) {
    throw ChannelError(std::string(block) + ": " + what + " has " + std::to_string(v.value().channels()) +
                       " channels, block expects " + std::to_string(expected));
  }
}

}  // namespace

std::size_t upsample_padding(std::size_t kernel) {
  switch (kernel) {
    case 2:
      return 0;
    case 4:
      return 1;
    case 6:
      return 2;
    default:
      throw UnsupportedError("transposed_conv2x: unsupported kernel size " + std::to_string(kernel) +
                             " (expected 2, 4 or 6)");
  }
}

ag::Var transposed_conv2x(const ag::Var& input, const ag::Var& weight, const ag::Var& bias, std::size_t kernel) {
  const std::size_t pad = upsample_padding(kernel);
  if (weight.value().rank() != 4 || weight.value().dim(2) != kernel || weight.value().dim(3) != kernel) {
    throw ShapeError("transposed_conv2x: weight " + shape_string(weight.shape()) + " is not a " +
                     std::to_string(kernel) + "x" + std::to_string(kernel) + " kernel");
  }
  return ag::conv_transpose2d(input, weight, bias, 2, pad);
}

ag::Var bilinear_resample(const ag::Var& input, std::size_t target_h, std::size_t target_w) {
  if (target_h < 1 || target_w < 1) throw DimensionError("bilinear_resample: target size must be >= 1");
  return ag::resize_bilinear(input, target_h, target_w);
}

MsabParams MsabParams::make(std::size_t ch_in, std::size_t ch_skip, std::size_t ch_out, nn::InitRng& rng) {
  if (ch_in == 0 || ch_skip == 0 || ch_out == 0) throw InvalidSpecError("msab: channel counts must be >= 1");
  MsabParams p;
  p.ch_in = ch_in;
  p.ch_skip = ch_skip;
  p.ch_out = ch_out;
  p.gate = AttentionGateParams::make(ch_in, ch_skip, AttentionGateParams::default_intermediate(ch_skip), rng);
  for (std::size_t b = 0; b < 3; ++b) {
    p.up[b] = nn::ConvTranspose2d::make(ch_in, ch_out, kMsabKernels[b], 2, upsample_padding(kMsabKernels[b]), rng);
    p.branch_proj[b] = nn::Conv2d::make(ch_out + ch_skip, ch_out, 1, 1, 0, true, rng);
  }
  p.fuse = nn::Conv2d::make(3 * ch_out, ch_out, 1, 1, 0, true, rng);
  p.norm = nn::BatchNorm2d::make(ch_out);
  return p;
}

void MsabParams::validate() const {
  if (fuse.in_channels() != 3 * ch_out || fuse.out_channels() != ch_out) {
    throw ChannelError("msab: fuse must map 3*ch_out=" + std::to_string(3 * ch_out) + " -> " +
                       std::to_string(ch_out) + " channels");
  }
  for (std::size_t b = 0; b < 3; ++b) {
    if (up[b].in_channels() != ch_in || up[b].out_channels() != ch_out || up[b].kernel() != kMsabKernels[b]) {
      throw ChannelError("msab: upsampling branch " + std::to_string(b + 1) + " has inconsistent shape");
    }
    if (branch_proj[b].in_channels() != ch_out + ch_skip || branch_proj[b].out_channels() != ch_out) {
      throw ChannelError("msab: branch projection " + std::to_string(b + 1) + " has inconsistent shape");
    }
  }
  if (gate.ch_x != ch_in || gate.ch_y != ch_skip) throw ChannelError("msab: attention gate channel mismatch");
  if (norm.channels() != ch_out) throw ChannelError("msab: batch-norm channel mismatch");
}

nn::ParameterTable MsabParams::parameters() const {
  nn::ParameterTable t;
  t.add("gate.", gate.parameters());
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string k = std::to_string(kMsabKernels[b]);
    t.add("up" + k + ".", up[b].parameters());
    t.add("proj" + k + ".", branch_proj[b].parameters());
  }
  t.add("fuse.", fuse.parameters());
  t.add("norm.", norm.parameters());
  return t;
}

AbParams AbParams::make(std::size_t ch_in, std::size_t ch_skip, std::size_t ch_out, nn::InitRng& rng) {
  if (ch_in == 0 || ch_out == 0) throw InvalidSpecError("ab: channel counts must be >= 1");
  AbParams p;
  p.ch_in = ch_in;
  p.ch_skip = ch_skip;
  p.ch_out = ch_out;
  if (ch_skip > 0) {
    p.gate = AttentionGateParams::make(ch_in, ch_skip, AttentionGateParams::default_intermediate(ch_skip), rng);
  }
  p.up = nn::ConvTranspose2d::make(ch_in, ch_out, 4, 2, upsample_padding(4), rng);
  p.fuse = nn::Conv2d::make(ch_out + ch_skip, ch_out, 1, 1, 0, true, rng);
  p.norm = nn::BatchNorm2d::make(ch_out);
  return p;
}

void AbParams::validate() const {
  if (up.in_channels() != ch_in || up.out_channels() != ch_out || up.kernel() != 4) {
    throw ChannelError("ab: upsampling layer has inconsistent shape");
  }
  if (gate.has_value() != (ch_skip > 0)) throw ChannelError("ab: gate presence does not match ch_skip");
  if (fuse.in_channels() != ch_out + ch_skip || fuse.out_channels() != ch_out) {
    throw ChannelError("ab: fuse must map " + std::to_string(ch_out + ch_skip) + " -> " + std::to_string(ch_out));
  }
  if (gate && (gate->ch_x != ch_in || gate->ch_y != ch_skip)) throw ChannelError("ab: attention gate mismatch");
  if (norm.channels() != ch_out) throw ChannelError("ab: batch-norm channel mismatch");
}

nn::ParameterTable AbParams::parameters() const {
  nn::ParameterTable t;
  if (gate) t.add("gate.", gate->parameters());
  t.add("up4.", up.parameters());
  t.add("fuse.", fuse.parameters());
  t.add("norm.", norm.parameters());
  return t;
}

ag::Var msab_forward(const ag::Var& x, const ag::Var& skip, const MsabParams& params, nn::Mode mode, Trace* trace,
                     const std::string& name) {
  check_upsample_pair(x, skip, "msab_forward");
  check_channels(x, params.ch_in, "msab_forward", "input");
  check_channels(skip, params.ch_skip, "msab_forward", "skip");
  params.validate();

  const std::size_t out_h = skip.value().height();
  const std::size_t out_w = skip.value().width();
  const ag::Var attended = attention_forward(x, skip, params.gate).gated;

  std::array<ag::Var, 3> branches;
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& up = params.up[b];
    ag::Var upsampled = transposed_conv2x(x, up.weight, up.bias, kMsabKernels[b]);
    upsampled = bilinear_resample(upsampled, out_h, out_w);
    const std::array<ag::Var, 2> parts{upsampled, attended};
    branches[b] = params.branch_proj[b].forward(ag::concat_channels(parts));
    if (trace) trace->record(name, "branch" + std::to_string(b + 1), branches[b].shape());
  }
  // Outer branches are brought onto the middle branch's grid before fusing.
  const std::size_t mid_h = branches[1].value().height();
  const std::size_t mid_w = branches[1].value().width();
  branches[0] = bilinear_resample(branches[0], mid_h, mid_w);
  branches[2] = bilinear_resample(branches[2], mid_h, mid_w);

  const ag::Var prefuse = ag::concat_channels(branches);
  if (trace) trace->record(name, "prefuse", prefuse.shape());
  ag::Var out = ag::leaky_relu(params.norm.forward(params.fuse.forward(prefuse), mode), nn::kLeakySlope);
  if (trace) trace->record(name, "output", out.shape());
  return out;
}

ag::Var ab_forward(const ag::Var& x, const std::optional<ag::Var>& skip, const AbParams& params, nn::Mode mode,
                   Trace* trace, const std::string& name) {
  check_channels(x, params.ch_in, "ab_forward", "input");
  params.validate();
  if (skip.has_value() != params.gate.has_value()) {
    throw ShapeError(std::string("ab_forward: block was built ") + (params.gate ? "with" : "without") +
                     " a skip input");
  }
  const ag::Var up = transposed_conv2x(x, params.up.weight, params.up.bias, 4);
  ag::Var fused;
  if (skip) {
    check_upsample_pair(x, *skip, "ab_forward");
    check_channels(*skip, params.ch_skip, "ab_forward", "skip");
    const ag::Var attended = attention_forward(x, *skip, *params.gate).gated;
    const std::array<ag::Var, 2> parts{up, attended};
    const ag::Var cat = ag::concat_channels(parts);
    if (trace) trace->record(name, "prefuse", cat.shape());
    fused = params.fuse.forward(cat);
  } else {
    if (trace) trace->record(name, "prefuse", up.shape());
    fused = params.fuse.forward(up);
  }
  ag::Var out = ag::leaky_relu(params.norm.forward(fused, mode), nn::kLeakySlope);
  if (trace) trace->record(name, "output", out.shape());
  return out;
}

}  // namespace msaunet
