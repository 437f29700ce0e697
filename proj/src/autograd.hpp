#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tensor.hpp"

namespace udair::ag {

// Reverse-mode tape. Graphs are built per forward pass; backward() walks the
// graph in reverse topological order and accumulates gradients into every
// node that requires them.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  // Consumes this->grad, accumulates into parents' grads.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape());
  }
  void zero_grad() {
    if (grad.numel()) for (auto& g : grad.vec()) g = 0.0;
  }
  const std::vector<int>& shape() const { return value.shape(); }
};

Var make_leaf(Tensor value, bool requires_grad);
inline Var constant(Tensor value) { return make_leaf(std::move(value), false); }
inline Var param(Tensor value) { return make_leaf(std::move(value), true); }

// While alive, new ops record no tape (inference mode).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool prev_;
};
bool grad_enabled();

// Seeds d(root)/d(root)=1 (root must be a single-element tensor) and runs the
// tape. Gradients accumulate; call zero_grad on leaves between steps.
void backward(const Var& root);

// ---- elementwise, with right-aligned numpy-style broadcasting ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& a, double c);
Var scale(const Var& a, double c);
inline Var neg(const Var& a) { return scale(a, -1.0); }

Var sqrt_v(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var tanh_v(const Var& a);
Var sigmoid_v(const Var& a);
Var gelu(const Var& a);
Var abs_v(const Var& a);
Var square(const Var& a);

// ---- reductions / layout ----
Var sum(const Var& a, std::vector<int> axes, bool keepdim);
Var mean(const Var& a, std::vector<int> axes, bool keepdim);
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}
Var reshape(const Var& a, std::vector<int> shape);
Var transpose2d(const Var& a);
Var transpose_last2(const Var& a);  // (B,n,m) -> (B,m,n)
// (N,C,H,W) -> (N*H*W, C) rows of spatial vectors, and its inverse.
Var nchw_to_rows(const Var& a);
Var rows_to_nchw(const Var& a, int n, int h, int w);
Var concat_channels(const std::vector<Var>& xs);  // along axis 1 of NCHW

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);  // (n,k)x(k,m)
Var bmm(const Var& a, const Var& b);     // (B,n,k)x(B,k,m)

// ---- neural net primitives ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           int groups = 1);
Var upsample_nearest(const Var& x, int factor);
Var softmax_lastdim(const Var& a);
// x / max(||x||_2, eps) along the last axis.
Var l2_normalize_lastdim(const Var& a, double eps);
// rows of `table` (K,D) selected by index; gradient scatter-adds into table.
Var gather_rows(const Var& table, std::vector<int> indices);
Var stop_grad(const Var& a);

// ---- optimizer ----
// Decoupled weight decay adaptive-moment update.
class AdamW {
public:
  AdamW(std::vector<Var> params, double lr, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();
  void zero_grad();
  const std::vector<Var>& params() const { return params_; }

private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

// Plain gradient step p -= lr * grad (the test-time adaptation update).
void sgd_step(const std::vector<Var>& params, double lr);

}  // namespace udair::ag
