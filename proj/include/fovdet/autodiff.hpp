#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fovdet/tensor.hpp"

namespace fovdet::ad {

// Trainable tensor with gradient and optimizer state.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  explicit Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape);
    adam_m = Tensor(value.shape);
    adam_v = Tensor(value.shape);
  }
};

class ParamStore {
 public:
  Param* add(const std::string& name, Tensor init);
  Param* find(const std::string& name);
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  void zero_grads();
  bool all_finite() const;
  std::int64_t total_size() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// Define-by-run reverse-mode tape over Tensor ops. One tape per forward
// pass; backward() accumulates into Param::grad.
class Tape {
 public:
  using Var = int;

  Var input(Tensor t);        // constant, no gradient
  Var param(Param* p);        // leaf bound to a parameter

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v)].value; }
  const Tensor& grad_of(Var v) const { return nodes_[static_cast<std::size_t>(v)].grad; }

  // elementwise / broadcast
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var add_vec_rows(Var a, Var v);  // a[n,d] + v[d] per row
  Var add_vec_chw(Var a, Var v);   // a[C,H,W] + v[C] per channel
  Var div_rows(Var a, Var v);      // a[n,d] / v[n] per row

  // reductions / reshaping
  Var sum_all(Var a);              // -> [1]
  Var mean_all(Var a);             // -> [1]
  Var sum_rows(Var a);             // [n,d] -> [n]
  Var gather_rows(Var a, std::vector<int> rows);
  Var slice_cols(Var a, int c0, int c1);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var reshape(Var a, std::vector<int> shape);
  Var im2rows(Var a);              // [C,H,W] -> [H*W, C]

  // nonlinearities
  Var relu(Var a);
  Var gelu(Var a, bool tanh_approx = false);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var exp(Var a);
  Var log(Var a);  // caller guarantees positivity
  Var square(Var a);
  Var sqrt(Var a);
  Var abs(Var a);
  Var emin(Var a, Var b);
  Var emax(Var a, Var b);
  Var clamp_min(Var a, double c);

  // linear algebra
  Var matmul_nn(Var a, Var b);  // [n,k]x[k,m]
  Var matmul_nt(Var a, Var b);  // [n,k]x[m,k]^T
  Var conv2d(Var x, Var w, int stride, int pad);

  // softmax family (row-wise over the last dim of [n,d])
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var layernorm_rows(Var a, Var gamma, Var beta, double eps = 1e-6);

  // Composite: x[n,din] * W[dout,din]^T + b[dout]
  Var linear(Var x, Var w, Var b) { return add_vec_rows(matmul_nt(x, w), b); }

  void backward(Var root);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Param* sink = nullptr;
    std::function<void(Tape&, Var)> back;
  };

  Var make(Tensor value, bool needs_grad,
           std::function<void(Tape&, Var)> back = nullptr);
  Tensor& grad_mut(Var v) { return nodes_[static_cast<std::size_t>(v)].grad; }
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v)].needs_grad; }

  std::vector<Node> nodes_;
};

// Central-difference gradient check: returns the max relative error over all
// entries of all params, where rel = |analytic - numeric| /
// max(1e-8, |analytic| + |numeric|).
double gradient_check(ParamStore& params,
                      const std::function<double()>& loss_fn,
                      const std::function<void()>& grad_fn, double step);

}  // namespace fovdet::ad
