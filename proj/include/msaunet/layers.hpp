#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "msaunet/autograd.hpp"
#include "msaunet/tensor.hpp"

namespace msaunet::nn {

enum class Mode { Train, Eval };

// Seeded source for weight initialization. Uniform draws are built from the
// raw 64-bit engine output so they do not depend on the standard library's
// distribution implementation.
class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

// Named handles to everything a model learns or tracks. Var copies share the
// underlying node, so optimizers and checkpoints mutate the model in place.
struct ParameterTable {
  std::vector<std::pair<std::string, ag::Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(const std::string& prefix, const ParameterTable& other);
};

struct Conv2d {
  ag::Var weight;  // [out, in, k, k]
  ag::Var bias;    // [out] or undefined
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv2d make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
                     bool with_bias, InitRng& rng);

  std::size_t in_channels() const { return weight.value().dim(1); }
  std::size_t out_channels() const { return weight.value().dim(0); }
  ag::Var forward(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
  ParameterTable parameters() const;
};

struct ConvTranspose2d {
  ag::Var weight;  // [in, out, k, k]
  ag::Var bias;    // [out]
  std::size_t stride = 2;
  std::size_t pad = 0;

  static ConvTranspose2d make(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                              std::size_t pad, InitRng& rng);

  std::size_t in_channels() const { return weight.value().dim(0); }
  std::size_t out_channels() const { return weight.value().dim(1); }
  std::size_t kernel() const { return weight.value().dim(2); }
  ag::Var forward(const ag::Var& x) const { return ag::conv_transpose2d(x, weight, bias, stride, pad); }
  ParameterTable parameters() const;
};

struct BatchNorm2d {
  ag::Var gamma;
  ag::Var beta;
  // Mutable so that forward on a const model can still update running
  // statistics in training mode; only the trainer thread does that.
  mutable ag::BatchNormState state;

  static BatchNorm2d make(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  std::size_t channels() const { return gamma.value().size(); }
  ag::Var forward(const ag::Var& x, Mode mode) const {
    return ag::batch_norm(x, gamma, beta, state, mode == Mode::Train);
  }
  ParameterTable parameters() const;
};

// Negative slope shared by every leaky rectifier in the network.
inline constexpr double kLeakySlope = 0.01;

}  // namespace msaunet::nn
