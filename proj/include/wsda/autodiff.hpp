#pragma once

#include <array>
#include <deque>
#include <functional>
#include <vector>

#include "wsda/tensor.hpp"

namespace wsda::ad {

struct Node {
  Tensor own;                   // storage, unless the node views external data
  const Tensor* value = &own;   // &own or an external parameter tensor
  Tensor grad;                  // allocated on first accumulation
  bool wants_grad = false;      // true iff some ancestor is a parameter
  std::function<void()> backprop;

  const Tensor& val() const { return *value; }
  Tensor& grad_buf() {
    if (grad.empty()) grad = Tensor(value->dims());
    return grad;
  }
};

using Var = Node*;

// Target of one grid cell for the detection loss ops.
struct CellTarget {
  int cell = 0;  // row-major index into the H*W grid
  int cls = 0;
  std::array<double, 4> delta{};
};

// Reverse-mode tape. Ops append nodes in topological order; backward()
// walks the tape in reverse, so a node's gradient is complete before its
// backprop closure runs. Nodes live in a deque and stay address-stable.
class Graph {
 public:
  Var leaf(Tensor v, bool wants_grad = false);
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v)); }
  // The caller guarantees `external` outlives the graph and is not mutated
  // while the graph is alive.
  Var param(const Tensor& external);

  void backward(Var root);  // root must be scalar

  // elementwise / shape ops
  Var add(Var a, Var b);
  Var add_n(const std::vector<Var>& xs);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double k);
  Var affine(Var a, double k, double c);  // k*a + c
  Var sqrt(Var a);
  Var abs_sub_const(Var a, double k);  // |a - k|
  Var relu(Var a);
  Var sigmoid(Var a);
  Var index(Var a, int i);          // scalar pick
  Var concat(Var a, Var b);         // flat concatenation
  Var dot_const(Var a, std::vector<double> w);

  // network ops
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  Var fc(Var x, Var w, Var b);  // x treated as flat, w is (out, in)
  Var upsample2x(Var x);        // nearest neighbor, (H,W,C) -> (2H,2W,C)
  Var global_avg_pool(Var x);   // (H,W,C) -> (C)
  Var channel_slice(Var x, int c0, int c1);
  // Bilinear sampling of an out_size x out_size grid of box cell centers.
  // Box is in image pixels; feature coordinates are px/stride - 0.5 with
  // edge clamping. Gradients flow into the feature map only.
  Var roi_bilinear(Var feat, const std::array<double, 4>& box_px, int out_size, double stride_px);
  // Identity forward; backward multiplies upstream gradients by -lambda.
  Var gradient_reversal(Var x, double lambda);

  // loss ops (scalar outputs)
  Var bce_logits_mean(Var logits, Tensor targets);
  Var cells_softmax_ce_mean(Var cls_slice, const std::vector<CellTarget>& pos);
  Var cells_smooth_l1_mean(Var box_slice, const std::vector<CellTarget>& pos);
  // Focal domain term on a probability node. Target samples pull p toward 1,
  // source samples toward 0. p is clamped to [eps, 1-eps] inside logs/powers.
  Var focal_from_prob(Var p, double gamma, bool is_target);

  size_t node_count() const { return nodes_.size(); }

 private:
  Var make(Tensor v, bool wants_grad);
  std::deque<Node> nodes_;
};

// Central finite-difference gradient of f at x, step h (test/diagnostic aid).
double central_diff(const std::function<double(double)>& f, double x, double h);

}  // namespace wsda::ad
