// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Dense f64 tensors with reverse-mode autodiff. Ops record onto a
// thread-local tape when grad mode is on and at least one input is tracked;
// backward() walks the tape in reverse creation order (a valid topological
// order, since inputs always predate their consumers). Leaf gradients
// accumulate across backward calls until explicitly zeroed.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "exsep/common.hpp"

namespace exsep {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  bool tracked() const { return requires_grad || static_cast<bool>(backward_fn); }
  long numel() const { return static_cast<long>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double fill,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const std::vector<int>& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  long numel() const { return n_->numel(); }

  const std::vector<double>& data() const { return n_->value; }
  // Mutable access for leaf tensors (parameter updates). Contract error on
  // graph-produced tensors: their values are fixed once recorded.
  std::vector<double>& leaf_data();

  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  bool tracked() const { return n_->tracked(); }
  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() {
    if (!n_->grad.empty()) n_->grad.assign(n_->value.size(), 0.0);
  }

  uint64_t id() const { return n_->id; }
  const NodePtr& node() const { return n_; }

 private:
  NodePtr n_;
};

// --- autograd control -------------------------------------------------------

bool grad_mode_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// d(loss)/d(x) for every tracked tensor feeding `loss`. Loss must be scalar.
// Intermediate grads are reset per call; leaf grads accumulate.
void backward(const Tensor& loss);

// Drop recorded op nodes (leaves owned elsewhere survive).
void clear_tape();
size_t tape_size();

// --- ops --------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor divide_scalar(const Tensor& a, double s);
// rows of `a` plus vector `v` (bias add): a is r x c, v has c entries
Tensor add_rowvec(const Tensor& a, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T with a: m x k, b: n x k
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);

Tensor slice_cols(const Tensor& a, int col0, int len);
Tensor concat_cols(const std::vector<Tensor>& parts);

// scores[m,n] = q[m] . rel[clip(m-n)] for a learned offset table
// rel: (2*max_len-1) x dk
Tensor relpos_scores(const Tensor& q, const Tensor& rel, int max_len);

Tensor sum_all(const Tensor& a);
// sum over all entries of (a - b)^2
Tensor sum_sq_diff(const Tensor& a, const Tensor& b);

// --- parameters --------------------------------------------------------------

// Named parameters with stable iteration order (insertion order).
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }
  long total_scalars() const;
  void zero_grad();

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> by_name_;
};

}  // namespace exsep
