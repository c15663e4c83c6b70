#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mevo/tensor.hpp"

namespace mevo::ag {

// Reverse-mode autodiff on a dynamically built tape. Every operation creates
// a Node holding its value and a closure that scatters the incoming gradient
// to the parents. Graphs are rebuilt per forward pass; parameter leaves
// persist across passes and accumulate gradients until zero_grad().
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size() || !grad.same_shape(value)) grad = Tensor::zeros(value.shape());
  }
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantic handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor v, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  void zero_grad() {
    if (node_) {
      node_->ensure_grad();
      node_->grad.fill(0.0);
    }
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var constant_scalar(double v) { return Var(Tensor::scalar(v), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

// Runs reverse-mode accumulation from a scalar loss. Gradients of parameter
// leaves accumulate (call zero_grad between optimizer steps).
void backward(const Var& loss);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var abs(const Var& a);
Var elu(const Var& a);
Var sigmoid(const Var& a);
// log(x / (1-x)) with x clamped to [eps, 1-eps]; flat outside the clamp.
Var logit_clamped(const Var& a, double eps);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
inline Var mean_abs_diff(const Var& a, const Var& b) { return mean(abs(sub(a, b))); }

// ---- channel / shape ops on [C,H,W] ----
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int start, int count);
Var softmax_channels(const Var& x);   // softmax over C at each pixel
Var spatial_softmax(const Var& x);    // softmax over H*W per channel
Var broadcast_mul(const Var& mask, const Var& x);  // mask [1,H,W] * x [C,H,W]

// ---- convolution & sampling ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var avg_pool2(const Var& x);

// Bilinear sampling with border clamping. `flow` is [2,Ho,Wo] of offsets in
// normalized coordinates added to the identity grid of the output size;
// channel 0 is the x offset, channel 1 the y offset. Differentiable w.r.t.
// both input values and flow values.
Var grid_sample(const Var& x, const Var& flow);
Var resize_bilinear(const Var& x, int out_h, int out_w);

// Expectation of the coordinate grid under spatially normalized heatmaps.
// [K,H,W] -> [K,2] rows (x, y). Throws if a channel does not sum to 1
// within 1e-4.
Var soft_argmax(const Var& heatmap);

// Renders per-keypoint Gaussian heatmaps, normalized to unit spatial sum per
// channel. kps is [K,2] rows (x, y) in normalized coordinates; sigma in
// normalized units. Differentiable w.r.t. the keypoints.
Var gaussian_heatmap(const Var& kps, double sigma, int height, int width);

}  // namespace mevo::ag
