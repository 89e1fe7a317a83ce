#pragma once

#include <cstddef>

#include "msaunet/autograd.hpp"
#include "msaunet/layers.hpp"

namespace msaunet {

// Additive attention gate.
//
//   a_m  = C_x^T x_m + C_y^T y_m + b_x      (x resampled onto y's grid)
//   b_m  = phi^T relu(a_m) + b_phi
//   beta = sigmoid(b_m)
//   out  = y * beta                           (beta broadcast over channels)
//
// x is the coarse gating signal, y the skip feature map at twice x's
// resolution. The 1x1 projections carry no normalization.
struct AttentionGateParams {
  std::size_t ch_x = 0;
  std::size_t ch_y = 0;
  std::size_t ch_t = 0;
  ag::Var c_x;    // [ch_t, ch_x, 1, 1]
  ag::Var b_x;    // [ch_t]
  ag::Var c_y;    // [ch_t, ch_y, 1, 1]
  ag::Var phi;    // [1, ch_t, 1, 1]
  ag::Var b_phi;  // [1]

  // Intermediate width used when none is given: half the skip channels, at least 1.
  static std::size_t default_intermediate(std::size_t ch_y) { return ch_y / 2 > 0 ? ch_y / 2 : 1; }

  static AttentionGateParams make(std::size_t ch_x, std::size_t ch_y, std::size_t ch_t, nn::InitRng& rng);
  // All weights and biases zero: beta is 0.5 everywhere.
  static AttentionGateParams zeros(std::size_t ch_x, std::size_t ch_y, std::size_t ch_t);

  void validate() const;
  nn::ParameterTable parameters() const;
};

struct AttentionOutput {
  ag::Var gated;  // [n, ch_y, 2h, 2w]
  ag::Var attn;   // [n, 1, 2h, 2w], every value in (0, 1)
};

AttentionOutput attention_forward(const ag::Var& gate, const ag::Var& skip, const AttentionGateParams& params);

}  // namespace msaunet
