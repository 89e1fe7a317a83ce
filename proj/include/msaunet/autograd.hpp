#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "msaunet/tensor.hpp"

// Minimal reverse-mode tape over Tensor values.
//
// Every op returns a Var whose node remembers its inputs and a closure that
// pushes the node's gradient into them. Parameters are long-lived leaf Vars
// owned by the layers; intermediate nodes die with the returned graph.
namespace msaunet::ag {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor::Shape& shape() const { return node_->value.shape(); }

  // Drops the accumulated gradient (leaves it empty).
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Graph recording is on by default. While a NoGradGuard is alive on the
// current thread, ops produce plain constant Vars.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Runs the tape from `root`, seeding its gradient with `seed`.
void backward(const Var& root, const Tensor& seed);

// --- ops (all feature maps NCHW) -------------------------------------------

// weight [out, in, k, k]; bias optional (undefined Var means none).
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad);

// weight [in, out, k, k]; output extent (in - 1) * stride - 2 * pad + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Training mode normalizes with batch statistics and updates the running
// estimates in `state`; evaluation mode uses the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training);

Var leaky_relu(const Var& x, double negative_slope);
Var relu(const Var& x);
Var sigmoid(const Var& x);

// Corner-aligned bilinear resampling of every plane to out_h x out_w.
Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);

Var concat_channels(std::span<const Var> parts);

// x [n, c, h, w] * gate [n, 1, h, w], broadcast over channels.
Var mul_channel_broadcast(const Var& x, const Var& gate);

Var add(const Var& a, const Var& b);

}  // namespace msaunet::ag
