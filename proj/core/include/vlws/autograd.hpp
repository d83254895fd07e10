#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vlws/tensor.hpp"

namespace vlws {

class Node;
using Var = std::shared_ptr<Node>;

// One node of the dynamically built compute graph. Gradients accumulate into
// `grad` (allocated lazily, same shape as `value`).
class Node {
 public:
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string name;  // set for parameters
  std::vector<Var> parents;
  std::function<void(Node&)> backward_op;  // adds into parents' grads

  void ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

Var make_leaf(Tensor value, bool requires_grad = false, std::string name = "");
Var make_const(Tensor value);

// Reverse-mode sweep from a scalar root (seeds d(root)/d(root) = 1).
void backward(const Var& root);

namespace ag {

// Elementwise / shape ops
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scaled(const std::vector<Var>& terms, const std::vector<double>& coeffs);
Var relu(const Var& x);

// x:{N,C,H,W}, w:{Co,Ci,kh,kw}, b:{Co}
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int dilation);
Var max_pool2d(const Var& x, int kernel, int stride, int pad);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var upsample_bilinear(const Var& x, int out_h, int out_w);  // align_corners=false
Var concat_channels(const std::vector<Var>& xs);
Var global_avg_pool(const Var& x);                        // {N,C,H,W} -> {N,C}
Var broadcast_to_map(const Var& v, int h, int w);         // {N,C} -> {N,C,H,W}
Var film_modulate(const Var& x, const Var& gamma, const Var& beta);  // per (n,c) affine

// x:{N,Din}, w:{Dout,Din}, b:{Dout}
Var linear(const Var& x, const Var& w, const Var& b);
Var tanh_op(const Var& x);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& x);
Var concat_rows(const std::vector<Var>& rows);  // k of {1,D} -> {k,D}

// Losses (scalar outputs, shape {1})
Var softmax_channel(const Var& logits);  // {N,C,H,W} -> probabilities
Var dice_loss_op(const Var& p, const Tensor& y_onehot, double epsilon);
Var weighted_ce_op(const Var& p, const Tensor& y_onehot, const std::vector<double>& w);
Var infonce_op(const Var& v_rows, const Var& t_rows, double tau);

// Largest divisor of c that is <= cap; group count for GroupNorm.
int norm_groups(int channels, int cap = 8);

}  // namespace ag
}  // namespace vlws
