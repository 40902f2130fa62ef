#pragma once

// Minimal reverse-mode automatic differentiation over NCHW tensors.
//
// Each op records its parents and a backward closure when any input requires
// gradients and gradient recording is enabled. `backward(loss)` walks the
// graph in reverse topological order and accumulates into `grad()` of every
// node that requires it. Parameters keep their gradients until `zero_grad`.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "jscna/tensor.hpp"

namespace jscna::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialized on first access.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  [[nodiscard]] const Tensor& value() const { return node_->value; }
  [[nodiscard]] Tensor& mutable_value() { return node_->value; }
  [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
  [[nodiscard]] const Tensor& grad() const { return node_->grad; }
  [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }
  [[nodiscard]] double item() const { return node_->value[0]; }
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Disables graph recording for its lifetime (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_enabled();

/// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
void backward(const Var& loss);

// Layers. Weights: conv (out, in, k, k); linear (out, in, 1, 1); biases and
// per-channel affine parameters (1, c, 1, 1).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               double eps = 1e-5);
Var silu(const Var& x);
Var add(const Var& a, const Var& b);
/// x (n,c,h,w) + e (n,c,1,1) broadcast over the spatial plane.
Var add_channel_bias(const Var& x, const Var& e);
Var upsample_nearest2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);

/// Multi-head softmax attention over the h*w tokens of a packed (n, 3c, h, w)
/// query/key/value tensor. Returns (n, c, h, w). When `head_mean_probs` is
/// non-null it receives the head-averaged attention, shape (n, 1, hw, hw),
/// rows indexed by query token.
Var self_attention(const Var& qkv, int heads, Tensor* head_mean_probs = nullptr);

// Losses (scalar outputs, mean reduction).
Var mse(const Var& a, const Var& b);
/// 0.5 * mean|a - b| + 0.5 * mean (a - b)^2
Var hybrid_l1_l2(const Var& a, const Var& b);

/// out[i] = a[i] * x[i] + b[i] * e[i] per batch item i; x is a constant.
Var affine_per_item(const Tensor& x, const Var& e, std::span<const double> a,
                    std::span<const double> b);
Var weighted_sum(const Var& s1, double w1, const Var& s2, double w2);

}  // namespace jscna::ag
