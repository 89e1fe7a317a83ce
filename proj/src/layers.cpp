#include "msaunet/layers.hpp"

#include <algorithm>
#include <cmath>

#include "msaunet/errors.hpp"

namespace msaunet::nn {
namespace {

Tensor uniform_tensor(Tensor::Shape shape, double bound, InitRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

double InitRng::uniform(double lo, double hi) {
  const double unit = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

void ParameterTable::add(const std::string& prefix, const ParameterTable& other) {
  for (const auto& [name, var] : other.params) params.emplace_back(prefix + name, var);
  for (const auto& [name, buf] : other.buffers) buffers.emplace_back(prefix + name, buf);
}

Conv2d Conv2d::make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                    bool with_bias, InitRng& rng) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) throw InvalidSpecError("conv2d: zero-sized dimension");
  Conv2d c;
  const double fan_in = static_cast<double>(in * kernel * kernel);
  c.weight = ag::Var(uniform_tensor({out, in, kernel, kernel}, std::sqrt(3.0 / fan_in), rng), true);
  if (with_bias) c.bias = ag::Var(Tensor({out}), true);
  c.stride = stride;
  c.pad = pad;
  return c;
}

ParameterTable Conv2d::parameters() const {
  ParameterTable t;
  t.params.emplace_back("weight", weight);
  if (bias.defined()) t.params.emplace_back("bias", bias);
  return t;
}

ConvTranspose2d ConvTranspose2d::make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                      std::size_t pad, InitRng& rng) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
    throw InvalidSpecError("conv_transpose2d: zero-sized dimension");
  }
  ConvTranspose2d c;
  // Each output pixel receives about in * (k / stride)^2 taps.
  const double taps = static_cast<double>(kernel * kernel) / static_cast<double>(stride * stride);
  const double fan_in = std::max(1.0, static_cast<double>(in) * taps);
  c.weight = ag::Var(uniform_tensor({in, out, kernel, kernel}, std::sqrt(3.0 / fan_in), rng), true);
  c.bias = ag::Var(Tensor({out}), true);
  c.stride = stride;
  c.pad = pad;
  return c;
}

ParameterTable ConvTranspose2d::parameters() const {
  ParameterTable t;
  t.params.emplace_back("weight", weight);
  t.params.emplace_back("bias", bias);
  return t;
}

BatchNorm2d BatchNorm2d::make(std::size_t channels, double momentum, double eps) {
  BatchNorm2d b;
  b.gamma = ag::Var(Tensor({channels}, 1.0), true);
  b.beta = ag::Var(Tensor({channels}, 0.0), true);
  b.state.running_mean = Tensor({channels}, 0.0);
  b.state.running_var = Tensor({channels}, 1.0);
  b.state.momentum = momentum;
  b.state.eps = eps;
  return b;
}

ParameterTable BatchNorm2d::parameters() const {
  ParameterTable t;
  t.params.emplace_back("gamma", gamma);
  t.params.emplace_back("beta", beta);
  t.buffers.emplace_back("running_mean", &state.running_mean);
  t.buffers.emplace_back("running_var", &state.running_var);
  return t;
}

}  // namespace msaunet::nn
