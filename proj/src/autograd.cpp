#include "msaunet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "msaunet/errors.hpp"
#include "msaunet/kernels.hpp"

namespace msaunet::ag {
namespace {

thread_local bool t_grad_enabled = true;

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected an NCHW tensor, got " + shape_string(t.shape()));
  }
}

// Creates the result node; records inputs only when some input needs a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value));
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (auto& v : inputs) node.inputs.push_back(v.node());
  node.backward = std::move(backward_fn);
  return out;
}

bool wants(const Node& self, std::size_t i) {
  return self.inputs.size() > i && self.inputs[i] && self.inputs[i]->requires_grad;
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

void backward(const Var& root, const Tensor& seed) {
  if (!root.defined()) throw Error("backward on an undefined Var");
  if (!root.value().same_shape(seed)) {
    throw ShapeError("backward seed " + shape_string(seed.shape()) + " does not match root " +
                     shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Release intermediate gradients; leaves (parameters) keep theirs.
  for (Node* node : order) {
    if (node->backward) node->grad = Tensor();
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  require_rank4(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d: weight must be [out, in, k, k]");
  if (wv.dim(1) != xv.channels()) {
    throw ChannelError("conv2d: input has " + std::to_string(xv.channels()) + " channels, weight expects " +
                       std::to_string(wv.dim(1)));
  }
  kernels::ConvGeometry g;
  g.batch = xv.batch();
  g.in_channels = xv.channels();
  g.in_h = xv.height();
  g.in_w = xv.width();
  g.out_channels = wv.dim(0);
  g.kernel = wv.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.out_h = kernels::conv_output_extent(g.in_h, g.kernel, stride, pad);
  g.out_w = kernels::conv_output_extent(g.in_w, g.kernel, stride, pad);
  if (g.out_h == 0 || g.out_w == 0) throw ShapeError("conv2d: kernel does not fit the input");
  if (bias.defined() && bias.value().size() != g.out_channels) throw ShapeError("conv2d: bias length mismatch");

  Tensor out = Tensor::nchw(g.batch, g.out_channels, g.out_h, g.out_w);
  kernels::conv2d_forward(g, xv.span(), wv.span(), bias.defined() ? bias.value().span() : std::span<const double>{},
                          out.span());

  const bool has_bias = bias.defined();
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [g, has_bias](Node& self) {
    const Tensor& x_val = self.inputs[0]->value;
    const Tensor& w_val = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor dx(x_val.shape());
      kernels::conv2d_backward_input(g, self.grad.span(), w_val.span(), dx.span());
      self.inputs[0]->accumulate(dx);
    }
    const bool want_w = wants(self, 1);
    const bool want_b = has_bias && wants(self, 2);
    if (want_w || want_b) {
      Tensor dw(w_val.shape());
      Tensor db({g.out_channels});
      kernels::conv2d_backward_weight(g, x_val.span(), self.grad.span(), dw.span(),
                                      want_b ? db.span() : std::span<double>{});
      if (want_w) self.inputs[1]->accumulate(dw);
      if (want_b) self.inputs[2]->accumulate(db);
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  require_rank4(xv, "conv_transpose2d");
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3)) {
    throw ShapeError("conv_transpose2d: weight must be [in, out, k, k]");
  }
  if (wv.dim(0) != xv.channels()) {
    throw ChannelError("conv_transpose2d: input has " + std::to_string(xv.channels()) +
                       " channels, weight expects " + std::to_string(wv.dim(0)));
  }
  // A transposed convolution is the input-gradient of the matching forward
  // convolution, whose input is our output.
  kernels::ConvGeometry g;
  g.batch = xv.batch();
  g.out_channels = xv.channels();
  g.out_h = xv.height();
  g.out_w = xv.width();
  g.in_channels = wv.dim(1);
  g.kernel = wv.dim(2);
  g.stride = stride;
  g.pad = pad;
  g.in_h = kernels::conv_transpose_output_extent(g.out_h, g.kernel, stride, pad);
  g.in_w = kernels::conv_transpose_output_extent(g.out_w, g.kernel, stride, pad);
  if (g.in_h == 0 || g.in_w == 0) throw ShapeError("conv_transpose2d: empty output");
  if (bias.defined() && bias.value().size() != g.in_channels) {
    throw ShapeError("conv_transpose2d: bias length mismatch");
  }

  Tensor out = Tensor::nchw(g.batch, g.in_channels, g.in_h, g.in_w);
  kernels::conv2d_backward_input(g, xv.span(), wv.span(), out.span());
  if (bias.defined()) {
    const std::size_t plane = g.in_h * g.in_w;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* p = out.data() + (n * g.in_channels + c) * plane;
        const double b = bias.value()[c];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
    }
  }

  const bool has_bias = bias.defined();
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [g, has_bias](Node& self) {
    const Tensor& x_val = self.inputs[0]->value;
    const Tensor& w_val = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor dx(x_val.shape());
      kernels::conv2d_forward(g, self.grad.span(), w_val.span(), {}, dx.span());
      self.inputs[0]->accumulate(dx);
    }
    if (wants(self, 1)) {
      Tensor dw(w_val.shape());
      kernels::conv2d_backward_weight(g, self.grad.span(), x_val.span(), dw.span(), {});
      self.inputs[1]->accumulate(dw);
    }
    if (has_bias && wants(self, 2)) {
      Tensor db({g.in_channels});
      const std::size_t plane = g.in_h * g.in_w;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* p = self.grad.data() + (n * g.in_channels + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        }
        db[c] = acc;
      }
      self.inputs[2]->accumulate(db);
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
  const auto& xv = x.value();
  require_rank4(xv, "batch_norm");
  const std::size_t c = xv.channels();
  if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw ChannelError("batch_norm: parameter length does not match " + std::to_string(c) + " channels");
  }
  kernels::NormGeometry g{xv.batch(), c, xv.plane()};
  Tensor mean({c});
  Tensor var({c});
  if (training) {
    kernels::channel_moments(g, xv.span(), mean.span(), var.span());
    const double count = static_cast<double>(g.batch * g.plane);
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    for (std::size_t i = 0; i < c; ++i) {
      state.running_mean[i] = (1.0 - state.momentum) * state.running_mean[i] + state.momentum * mean[i];
      state.running_var[i] = (1.0 - state.momentum) * state.running_var[i] + state.momentum * var[i] * unbias;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  Tensor inv_std({c});
  for (std::size_t i = 0; i < c; ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + state.eps);

  Tensor out(xv.shape());
  kernels::normalize_affine(g, xv.span(), mean.span(), inv_std.span(), gamma.value().span(), beta.value().span(),
                            out.span());

  return make_result(std::move(out), {x, gamma, beta},
                     [g, training, mean = std::move(mean), inv_std = std::move(inv_std)](Node& self) {
                       const Tensor& x_val = self.inputs[0]->value;
                       const Tensor& gamma_val = self.inputs[1]->value;
                       Tensor dx(x_val.shape());
                       Tensor dgamma({g.channels});
                       Tensor dbeta({g.channels});
                       if (training) {
                         kernels::batch_norm_backward(g, x_val.span(), self.grad.span(), mean.span(),
                                                      inv_std.span(), gamma_val.span(), dx.span(), dgamma.span(),
                                                      dbeta.span());
                       } else {
                         for (std::size_t n = 0; n < g.batch; ++n) {
                           for (std::size_t ch = 0; ch < g.channels; ++ch) {
                             const std::size_t base = (n * g.channels + ch) * g.plane;
                             for (std::size_t i = 0; i < g.plane; ++i) {
                               const double dy = self.grad[base + i];
                               dx[base + i] = dy * gamma_val[ch] * inv_std[ch];
                               dgamma[ch] += dy * (x_val[base + i] - mean[ch]) * inv_std[ch];
                               dbeta[ch] += dy;
                             }
                           }
                         }
                       }
                       if (wants(self, 0)) self.inputs[0]->accumulate(dx);
                       if (wants(self, 1)) self.inputs[1]->accumulate(dgamma);
                       if (wants(self, 2)) self.inputs[2]->accumulate(dbeta);
                     });
}

Var leaky_relu(const Var& x, double negative_slope) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : negative_slope * v;
  return make_result(std::move(out), {x}, [negative_slope](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    Tensor dx = self.grad;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!(xv[i] > 0.0)) dx[i] *= negative_slope;
    }
    self.inputs[0]->accumulate(dx);
  });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  // Clamped so the result stays strictly inside (0, 1) even where the
  // exact value rounds to 0 or 1.
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - 0x1.0p-53;
  for (auto& v : out.values()) v = std::clamp(1.0 / (1.0 + std::exp(-v)), lo, hi);
  return make_result(out, {x}, [y = out](Node& self) {
    Tensor dx = self.grad;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
    self.inputs[0]->accumulate(dx);
  });
}

Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  const auto& xv = x.value();
  require_rank4(xv, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear: target size must be >= 1");
  const std::size_t planes = xv.batch() * xv.channels();
  const std::size_t in_h = xv.height();
  const std::size_t in_w = xv.width();
  Tensor out = Tensor::nchw(xv.batch(), xv.channels(), out_h, out_w);
  kernels::resize_bilinear_forward(planes, in_h, in_w, out_h, out_w, xv.span(), out.span());
  return make_result(std::move(out), {x}, [planes, in_h, in_w, out_h, out_w](Node& self) {
    Tensor dx(self.inputs[0]->value.shape());
    kernels::resize_bilinear_backward(planes, in_h, in_w, out_h, out_w, self.grad.span(), dx.span());
    self.inputs[0]->accumulate(dx);
  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const auto& first = parts.front().value();
  require_rank4(first, "concat_channels");
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const auto& v = p.value();
    require_rank4(v, "concat_channels");
    if (v.batch() != first.batch() || v.height() != first.height() || v.width() != first.width()) {
      throw ShapeError("concat_channels: " + shape_string(v.shape()) + " does not align with " +
                       shape_string(first.shape()));
    }
    widths.push_back(v.channels());
    total += v.channels();
  }
  const std::size_t n = first.batch();
  const std::size_t plane = first.plane();
  Tensor out = Tensor::nchw(n, total, first.height(), first.width());
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const auto& v = p.value();
      const std::size_t block = v.channels() * plane;
      std::copy_n(v.data() + b * block, block, out.data() + (b * total + offset) * plane);
      offset += v.channels();
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(inputs), [widths, n, plane, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (wants(self, i)) {
        Tensor d(self.inputs[i]->value.shape());
        const std::size_t block = widths[i] * plane;
        for (std::size_t b = 0; b < n; ++b) {
          std::copy_n(self.grad.data() + (b * total + offset) * plane, block, d.data() + b * block);
        }
        self.inputs[i]->accumulate(d);
      }
      offset += widths[i];
    }
  });
}

Var mul_channel_broadcast(const Var& x, const Var& gate) {
  const auto& xv = x.value();
  const auto& gv = gate.value();
  require_rank4(xv, "mul_channel_broadcast");
  require_rank4(gv, "mul_channel_broadcast");
  if (gv.channels() != 1 || gv.batch() != xv.batch() || gv.height() != xv.height() || gv.width() != xv.width()) {
    throw ShapeError("mul_channel_broadcast: gate " + shape_string(gv.shape()) + " cannot scale " +
                     shape_string(xv.shape()));
  }
  const std::size_t n = xv.batch(), c = xv.channels(), plane = xv.plane();
  Tensor out(xv.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const double* gp = gv.data() + b * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xv[base + i] * gp[i];
    }
  }
  return make_result(std::move(out), {x, gate}, [n, c, plane](Node& self) {
    const Tensor& xv2 = self.inputs[0]->value;
    const Tensor& gv2 = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor dx(xv2.shape());
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) dx[base + i] = self.grad[base + i] * gv2[b * plane + i];
        }
      }
      self.inputs[0]->accumulate(dx);
    }
    if (wants(self, 1)) {
      Tensor dg(gv2.shape());
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (b * c + ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) dg[b * plane + i] += self.grad[base + i] * xv2[base + i];
        }
      }
      self.inputs[1]->accumulate(dg);
    }
  });
}

Var add(const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  out += b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->accumulate(self.grad);
    if (wants(self, 1)) self.inputs[1]->accumulate(self.grad);
  });
}

}  // namespace msaunet::ag
