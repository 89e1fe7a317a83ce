#include "msaunet/attention_gate.hpp"

#include <cmath>

#include "msaunet/errors.hpp"

namespace msaunet {

AttentionGateParams AttentionGateParams::make(std::size_t ch_x, std::size_t ch_y, std::size_t ch_t,
                                              nn::InitRng& rng) {
  if (ch_x == 0 || ch_y == 0 || ch_t == 0) throw InvalidSpecError("attention gate: channel counts must be >= 1");
  AttentionGateParams p;
  p.ch_x = ch_x;
  p.ch_y = ch_y;
  p.ch_t = ch_t;
  auto fill = [&rng](Tensor::Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    return ag::Var(std::move(t), true);
  };
  p.c_x = fill({ch_t, ch_x, 1, 1}, ch_x);
  p.c_y = fill({ch_t, ch_y, 1, 1}, ch_y);
  p.phi = fill({1, ch_t, 1, 1}, ch_t);
  p.b_x = ag::Var(Tensor({ch_t}), true);
  p.b_phi = ag::Var(Tensor({1}), true);
  return p;
}

AttentionGateParams AttentionGateParams::zeros(std::size_t ch_x, std::size_t ch_y, std::size_t ch_t) {
  AttentionGateParams p;
  p.ch_x = ch_x;
  p.ch_y = ch_y;
  p.ch_t = ch_t;
  p.c_x = ag::Var(Tensor({ch_t, ch_x, 1, 1}), true);
  p.c_y = ag::Var(Tensor({ch_t, ch_y, 1, 1}), true);
  p.phi = ag::Var(Tensor({1, ch_t, 1, 1}), true);
  p.b_x = ag::Var(Tensor({ch_t}), true);
  p.b_phi = ag::Var(Tensor({1}), true);
  return p;
}

void AttentionGateParams::validate() const {
  if (ch_t < 1) throw InvalidSpecError("attention gate: ch_t must be >= 1");
  const Tensor::Shape want_cx{ch_t, ch_x, 1, 1}, want_cy{ch_t, ch_y, 1, 1}, want_phi{1, ch_t, 1, 1};
  if (c_x.shape() != want_cx || c_y.shape() != want_cy || phi.shape() != want_phi || b_x.value().size() != ch_t ||
      b_phi.value().size() != 1) {
    throw ChannelError("attention gate: weight shapes inconsistent with ch_x=" + std::to_string(ch_x) +
                       " ch_y=" + std::to_string(ch_y) + " ch_t=" + std::to_string(ch_t));
  }
}

nn::ParameterTable AttentionGateParams::parameters() const {
  nn::ParameterTable t;
  t.params = {{"c_x", c_x}, {"b_x", b_x}, {"c_y", c_y}, {"phi", phi}, {"b_phi", b_phi}};
  return t;
}

AttentionOutput attention_forward(const ag::Var& gate, const ag::Var& skip, const AttentionGateParams& params) {
  const auto& g = gate.value();
  const auto& s = skip.value();
  if (g.rank() != 4 || s.rank() != 4) throw ShapeError("attention_forward: expected NCHW inputs");
  if (g.batch() != s.batch()) throw ShapeError("attention_forward: batch sizes differ");
  if (s.height() != 2 * g.height() || s.width() != 2 * g.width()) {
    throw ShapeError("attention_forward: skip " + shape_string(s.shape()) + " is not twice the gate " +
                     shape_string(g.shape()));
  }
  if (g.channels() != params.ch_x || s.channels() != params.ch_y) {
    throw ChannelError("attention_forward: got gate/skip channels " + std::to_string(g.channels()) + "/" +
                       std::to_string(s.channels()) + ", params expect " + std::to_string(params.ch_x) + "/" +
                       std::to_string(params.ch_y));
  }
  params.validate();

  const ag::Var gate_fine = ag::resize_bilinear(gate, s.height(), s.width());
  const ag::Var a = ag::add(ag::conv2d(gate_fine, params.c_x, params.b_x, 1, 0), ag::conv2d(skip, params.c_y, {}, 1, 0));
  const ag::Var logits = ag::conv2d(ag::relu(a), params.phi, params.b_phi, 1, 0);
  ag::Var beta = ag::sigmoid(logits);
  return {ag::mul_channel_broadcast(skip, beta), beta};
}

}  // namespace msaunet
