// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cassi/tensor.hpp"

namespace cassi::ag {

// Reverse-mode autodiff over Tensor values. Each op builds a Node holding
// the forward value and a closure that scatters the node's gradient into
// its parents. Graphs are rebuilt per forward pass; parameters are leaf
// nodes that persist across passes.
struct Node {
  Tensor value;
  Tensor grad;
  bool grad_alloc = false;
  bool requires_grad = false;  // leaf parameter
  bool needs_grad = false;     // reachable from some parameter
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  std::string name;

  Tensor& ensure_grad() {
    if (!grad_alloc) {
      grad = Tensor(value.shape());
      grad_alloc = true;
    }
    return grad;
  }
  void clear_grad() {
    grad = Tensor();
    grad_alloc = false;
  }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value, std::string name = "");
Var parameter(Tensor value, std::string name = "");

// Runs backprop from a scalar root (shape {1}).
void backward(const Var& root);

// Elementwise and scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var affine(const Var& x, double scale, double offset);
Var mul_scalar(const Var& x, const Var& s);  // s has shape {1}
Var div_scalar(const Var& x, const Var& s);
Var sum(const Var& x);
Var mean(const Var& x);
Var sigmoid(const Var& x);
Var gelu(const Var& x);
Var clamp01(const Var& x);

// Shape plumbing.
Var reshape(const Var& x, std::vector<int> shape);
Var concat_ch(const std::vector<Var>& xs);           // along dim 0 of {C,H,W}
Var slice_ch(const Var& x, int c0, int c1);          // channels [c0, c1)
Var chw_to_mat(const Var& x);                        // {C,H,W} -> {H*W, C}
Var mat_to_chw(const Var& m, int c, int h, int w);   // inverse
Var reflect_pad(const Var& x, int top, int bottom, int left, int right);
Var crop(const Var& x, int top, int bottom, int left, int right);

// Linear algebra.
Var matmul(const Var& a, const Var& b);  // {m,k} x {k,n}
Var softmax_rows(const Var& x);          // 2D, softmax along each row

// NN primitives on {C,H,W} feature maps.
Var conv2d(const Var& x, const Var& w, const Var& b, int groups);
Var avgpool3(const Var& x);  // 3x3 mean, same size, count excludes padding
Var bilinear(const Var& x, int out_h, int out_w);
Var layer_norm_ch(const Var& x, const Var& gamma, double eps = 1e-6);
Var global_avg_pool(const Var& x);            // {C,H,W} -> {C,1,1}
Var mul_channels(const Var& x, const Var& s);  // s {C,1,1}
Var mul_spatial(const Var& x, const Var& m);   // m {1,H,W}

// CASSI geometry on {C,H,W} cubes.
Var shift_bands(const Var& x, int step);               // -> {C,H,Wm}
Var unshift_bands(const Var& z, int step);             // -> {C,H,W}
Var sum_channels(const Var& x);                        // -> {1,H,W}
Var repeat_channels(const Var& y, int channels);       // {1,H,W} -> {C,H,W}

// Mean Charbonnier penalty, sqrt(d^2 + eps^2), as a scalar node.
Var charbonnier(const Var& pred, const Var& target, double eps);

}  // namespace cassi::ag
