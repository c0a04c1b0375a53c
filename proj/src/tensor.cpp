// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "exsep/kernels.hpp"

namespace exsep {

namespace {

struct Tape {
  std::vector<NodePtr> ops;
  uint64_t next_id = 1;
  bool grad_enabled = true;
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

long shape_numel(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw ContractError("tensor dims must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

NodePtr make_leaf(std::vector<int> shape, std::vector<double> data,
                  bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->id = tape().next_id++;
  return n;
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!tape().grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t->tracked()) return true;
  return false;
}

// Result node for an op. Recorded on the tape only when grad is flowing.
Tensor make_op(std::vector<int> shape, std::vector<double> value,
               std::initializer_list<const Tensor*> inputs,
               std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = tape().next_id++;
  if (should_record(inputs)) {
    for (const Tensor* t : inputs) n->parents.push_back(t->node());
    n->backward_fn = std::move(backward_fn);
    tape().ops.push_back(n);
  }
  return Tensor(n);
}

void accumulate(TensorNode& dst, const double* g, long count) {
  dst.ensure_grad();
  for (long i = 0; i < count; ++i) dst.grad[static_cast<size_t>(i)] += g[i];
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " +
                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  long n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape),
                          std::vector<double>(static_cast<size_t>(n), 0.0),
                          requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
  long n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape),
                          std::vector<double>(static_cast<size_t>(n), fill),
                          requires_grad));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<long>(data.size()))
    throw ContractError("from_data: data length does not match shape " +
                        shape_str(shape));
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_leaf({1}, {v}, requires_grad));
}

std::vector<double>& Tensor::leaf_data() {
  if (n_->backward_fn)
    throw ContractError("leaf_data: tensor is an op output, not a leaf");
  return n_->value;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item: tensor is not scalar, shape " +
                        shape_str(shape()));
  return n_->value[0];
}

const std::vector<double>& Tensor::grad() const {
  if (n_->grad.empty()) {
    // expose a stable all-zeros view by materializing it
    n_->ensure_grad();
  }
  return n_->grad;
}

// --- autograd control --------------------------------------------------------

bool grad_mode_enabled() { return tape().grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(tape().grad_enabled) {
  tape().grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { tape().grad_enabled = prev_; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  auto& t = tape();
  // Intermediate grads are per-call state; leaf grads persist.
  for (auto& n : t.ops) n->grad.clear();
  loss.node()->ensure_grad();
  loss.node()->grad[0] = 1.0;
  for (auto it = t.ops.rbegin(); it != t.ops.rend(); ++it) {
    TensorNode& n = **it;
    if (n.grad.empty() || !n.backward_fn) continue;
    n.backward_fn(n);
  }
}

void clear_tape() { tape().ops.clear(); }

size_t tape_size() { return tape().ops.size(); }

// --- elementwise ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_op(a.shape(), std::move(out), {&a, &b}, [](TensorNode& self) {
    const long n = self.numel();
    if (self.parents[0]->tracked())
      accumulate(*self.parents[0], self.grad.data(), n);
    if (self.parents[1]->tracked())
      accumulate(*self.parents[1], self.grad.data(), n);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_op(a.shape(), std::move(out), {&a, &b}, [](TensorNode& self) {
    const long n = self.numel();
    if (self.parents[0]->tracked())
      accumulate(*self.parents[0], self.grad.data(), n);
    if (self.parents[1]->tracked()) {
      self.parents[1]->ensure_grad();
      for (long i = 0; i < n; ++i)
        self.parents[1]->grad[static_cast<size_t>(i)] -=
            self.grad[static_cast<size_t>(i)];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return make_op(a.shape(), std::move(out), {&a, &b}, [](TensorNode& self) {
    const long n = self.numel();
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.tracked()) {
      pa.ensure_grad();
      for (long i = 0; i < n; ++i)
        pa.grad[static_cast<size_t>(i)] +=
            self.grad[static_cast<size_t>(i)] * pb.value[static_cast<size_t>(i)];
    }
    if (pb.tracked()) {
      pb.ensure_grad();
      for (long i = 0; i < n; ++i)
        pb.grad[static_cast<size_t>(i)] +=
            self.grad[static_cast<size_t>(i)] * pa.value[static_cast<size_t>(i)];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= s;
  return make_op(a.shape(), std::move(out), {&a}, [s](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    if (!pa.tracked()) return;
    pa.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
  });
}

Tensor divide_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data());
  for (double& v : out) v /= s;
  return make_op(a.shape(), std::move(out), {&a}, [s](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    if (!pa.tracked()) return;
    pa.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] / s;
  });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.dim(1) != v.dim(0))
    throw ContractError("add_rowvec: want [r x c] + [c], got " +
                        shape_str(a.shape()) + " + " + shape_str(v.shape()));
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(a.data());
  const auto& vd = v.data();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<size_t>(i) * cols + static_cast<size_t>(j)] += vd[static_cast<size_t>(j)];
  return make_op(a.shape(), std::move(out), {&a, &v},
                 [rows, cols](TensorNode& self) {
                   TensorNode& pa = *self.parents[0];
                   TensorNode& pv = *self.parents[1];
                   if (pa.tracked())
                     accumulate(pa, self.grad.data(), self.numel());
                   if (pv.tracked()) {
                     pv.ensure_grad();
                     for (int i = 0; i < rows; ++i)
                       for (int j = 0; j < cols; ++j)
                         pv.grad[static_cast<size_t>(j)] +=
                             self.grad[static_cast<size_t>(i) * cols + j];
                   }
                 });
}

// --- matmul -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ContractError("matmul: inner dims disagree, " +
                        shape_str(a.shape()) + " * " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  return make_op({m, n}, std::move(out), {&a, &b}, [m, k, n](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.tracked()) {
      pa.ensure_grad();
      // dA += dC * B^T
      kernels::matmul_nt(self.grad.data(), pb.value.data(), pa.grad.data(), m,
                         n, k, true);
    }
    if (pb.tracked()) {
      pb.ensure_grad();
      // dB += A^T * dC
      kernels::matmul_tn(pa.value.data(), self.grad.data(), pb.grad.data(), k,
                         m, n, true);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ContractError("matmul_nt: inner dims disagree, " +
                        shape_str(a.shape()) + " * " + shape_str(b.shape()) +
                        "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(static_cast<size_t>(m) * n);
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data(), m, k, n,
                     false);
  return make_op({m, n}, std::move(out), {&a, &b}, [m, k, n](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    if (pa.tracked()) {
      pa.ensure_grad();
      // dA += dC * B
      kernels::matmul(self.grad.data(), pb.value.data(), pa.grad.data(), m, n,
                      k, true);
    }
    if (pb.tracked()) {
      pb.ensure_grad();
      // dB += dC^T * A
      kernels::matmul_tn(self.grad.data(), pa.value.data(), pb.grad.data(), n,
                         m, k, true);
    }
  });
}

// --- nonlinearities -------------------------------------------------------------

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_op(a.shape(), std::move(out), {&a}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    if (!pa.tracked()) return;
    pa.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (pa.value[i] > 0.0) pa.grad[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.data().size());
  const auto& ad = a.data();
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = ad[i];
    // branch keeps exp() argument nonpositive on both sides
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  return make_op(a.shape(), std::move(out), {&a}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    if (!pa.tracked()) return;
    pa.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      pa.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor softmax_lastdim(const Tensor& a) {
  if (a.rank() < 1) throw ContractError("softmax_lastdim: rank must be >= 1");
  const int cols = a.dim(a.rank() - 1);
  const int rows = static_cast<int>(a.numel() / cols);
  std::vector<double> out(a.data().size());
  kernels::softmax_rows(a.data().data(), out.data(), rows, cols);
  return make_op(a.shape(), std::move(out), {&a},
                 [rows, cols](TensorNode& self) {
                   TensorNode& pa = *self.parents[0];
                   if (!pa.tracked()) return;
                   pa.ensure_grad();
                   for (int i = 0; i < rows; ++i) {
                     const double* s = self.value.data() + static_cast<size_t>(i) * cols;
                     const double* g = self.grad.data() + static_cast<size_t>(i) * cols;
                     double dot = 0.0;
                     for (int j = 0; j < cols; ++j) dot += s[j] * g[j];
                     double* d = pa.grad.data() + static_cast<size_t>(i) * cols;
                     for (int j = 0; j < cols; ++j) d[j] += s[j] * (g[j] - dot);
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  if (x.rank() != 2 || gain.rank() != 1 || bias.rank() != 1 ||
      gain.dim(0) != x.dim(1) || bias.dim(0) != x.dim(1))
    throw ContractError("layer_norm: want x[r x c], gain[c], bias[c]");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.data().size());
  auto mean = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  kernels::layer_norm_rows(x.data().data(), gain.data().data(),
                           bias.data().data(), eps, out.data(), mean->data(),
                           istd->data(), rows, cols);
  return make_op(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, cols, mean, istd](TensorNode& self) {
        TensorNode& px = *self.parents[0];
        TensorNode& pg = *self.parents[1];
        TensorNode& pb = *self.parents[2];
        std::vector<double> ynorm(static_cast<size_t>(cols));
        if (px.tracked()) px.ensure_grad();
        if (pg.tracked()) pg.ensure_grad();
        if (pb.tracked()) pb.ensure_grad();
        for (int i = 0; i < rows; ++i) {
          const double mu = (*mean)[static_cast<size_t>(i)];
          const double is = (*istd)[static_cast<size_t>(i)];
          const double* xv = px.value.data() + static_cast<size_t>(i) * cols;
          const double* g = self.grad.data() + static_cast<size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) ynorm[static_cast<size_t>(j)] = (xv[j] - mu) * is;
          if (pg.tracked())
            for (int j = 0; j < cols; ++j)
              pg.grad[static_cast<size_t>(j)] += g[j] * ynorm[static_cast<size_t>(j)];
          if (pb.tracked())
            for (int j = 0; j < cols; ++j) pb.grad[static_cast<size_t>(j)] += g[j];
          if (px.tracked()) {
            double sum_dy = 0.0, sum_dyy = 0.0;
            for (int j = 0; j < cols; ++j) {
              const double dy = g[j] * pg.value[static_cast<size_t>(j)];
              sum_dy += dy;
              sum_dyy += dy * ynorm[static_cast<size_t>(j)];
            }
            const double inv_n = 1.0 / cols;
            double* dx = px.grad.data() + static_cast<size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) {
              const double dy = g[j] * pg.value[static_cast<size_t>(j)];
              dx[j] += is * (dy - inv_n * sum_dy -
                             ynorm[static_cast<size_t>(j)] * inv_n * sum_dyy);
            }
          }
        }
      });
}

// --- slicing ---------------------------------------------------------------------

Tensor slice_cols(const Tensor& a, int col0, int len) {
  if (a.rank() != 2 || col0 < 0 || len <= 0 || col0 + len > a.dim(1))
    throw ContractError("slice_cols: range out of bounds");
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(static_cast<size_t>(rows) * len);
  for (int i = 0; i < rows; ++i)
    std::copy_n(a.data().data() + static_cast<size_t>(i) * cols + col0, len,
                out.data() + static_cast<size_t>(i) * len);
  return make_op({rows, len}, std::move(out), {&a},
                 [rows, cols, col0, len](TensorNode& self) {
                   TensorNode& pa = *self.parents[0];
                   if (!pa.tracked()) return;
                   pa.ensure_grad();
                   for (int i = 0; i < rows; ++i) {
                     const double* g = self.grad.data() + static_cast<size_t>(i) * len;
                     double* d = pa.grad.data() + static_cast<size_t>(i) * cols + col0;
                     for (int j = 0; j < len; ++j) d[j] += g[j];
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows)
      throw ContractError("concat_cols: row counts disagree");
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(rows) * cols);
  std::vector<int> widths;
  int at = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    widths.push_back(w);
    for (int i = 0; i < rows; ++i)
      std::copy_n(p.data().data() + static_cast<size_t>(i) * w, w,
                  out.data() + static_cast<size_t>(i) * cols + at);
    at += w;
  }

  auto n = std::make_shared<TensorNode>();
  n->shape = {rows, cols};
  n->value = std::move(out);
  n->id = tape().next_id++;
  bool record = tape().grad_enabled;
  if (record) {
    bool any = false;
    for (const Tensor& p : parts) any = any || p.tracked();
    record = any;
  }
  if (record) {
    for (const Tensor& p : parts) n->parents.push_back(p.node());
    n->backward_fn = [rows, cols, widths](TensorNode& self) {
      int at2 = 0;
      for (size_t pi = 0; pi < self.parents.size(); ++pi) {
        const int w = widths[pi];
        TensorNode& p = *self.parents[pi];
        if (p.tracked()) {
          p.ensure_grad();
          for (int i = 0; i < rows; ++i) {
            const double* g = self.grad.data() + static_cast<size_t>(i) * cols + at2;
            double* d = p.grad.data() + static_cast<size_t>(i) * w;
            for (int j = 0; j < w; ++j) d[j] += g[j];
          }
        }
        at2 += w;
      }
    };
    tape().ops.push_back(n);
  }
  return Tensor(n);
}

// --- relative position ----------------------------------------------------------

Tensor relpos_scores(const Tensor& q, const Tensor& rel, int max_len) {
  if (q.rank() != 2 || rel.rank() != 2 || q.dim(1) != rel.dim(1))
    throw ContractError("relpos_scores: want q[t x dk], rel[(2M-1) x dk]");
  if (rel.dim(0) != 2 * max_len - 1)
    throw ContractError("relpos_scores: table rows must equal 2*max_len-1");
  const int t = q.dim(0), dk = q.dim(1);
  std::vector<double> out(static_cast<size_t>(t) * t);
  kernels::relpos_scores(q.data().data(), rel.data().data(), out.data(), t, dk,
                         max_len, false);
  return make_op({t, t}, std::move(out), {&q, &rel},
                 [t, dk, max_len](TensorNode& self) {
                   TensorNode& pq = *self.parents[0];
                   TensorNode& pr = *self.parents[1];
                   pq.ensure_grad();
                   pr.ensure_grad();
                   kernels::relpos_backward(self.grad.data(), pq.value.data(),
                                            pr.value.data(), pq.grad.data(),
                                            pr.grad.data(), t, dk, max_len);
                 });
}

// --- reductions ------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op({1}, {s}, {&a}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    if (!pa.tracked()) return;
    pa.ensure_grad();
    const double g = self.grad[0];
    for (double& d : pa.grad) d += g;
  });
}

Tensor sum_sq_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sum_sq_diff");
  const auto& ad = a.data();
  const auto& bd = b.data();
  double s = 0.0;
  for (size_t i = 0; i < ad.size(); ++i) {
    const double d = ad[i] - bd[i];
    s += d * d;
  }
  return make_op({1}, {s}, {&a, &b}, [](TensorNode& self) {
    TensorNode& pa = *self.parents[0];
    TensorNode& pb = *self.parents[1];
    const double g = self.grad[0];
    if (pa.tracked()) {
      pa.ensure_grad();
      for (size_t i = 0; i < pa.value.size(); ++i)
        pa.grad[i] += 2.0 * g * (pa.value[i] - pb.value[i]);
    }
    if (pb.tracked()) {
      pb.ensure_grad();
      for (size_t i = 0; i < pb.value.size(); ++i)
        pb.grad[i] -= 2.0 * g * (pa.value[i] - pb.value[i]);
    }
  });
}

// --- ParamSet --------------------------------------------------------------------

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (by_name_.count(name))
    throw ContractError("ParamSet: duplicate parameter name " + name);
  order_.push_back(name);
  auto [it, ok] = by_name_.emplace(name, std::move(t));
  (void)ok;
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw ContractError("ParamSet: no parameter named " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw ContractError("ParamSet: no parameter named " + name);
  return it->second;
}

bool ParamSet::contains(const std::string& name) const {
  return by_name_.count(name) != 0;
}

long ParamSet::total_scalars() const {
  long n = 0;
  for (const auto& name : order_) n += by_name_.at(name).numel();
  return n;
}

void ParamSet::zero_grad() {
  for (const auto& name : order_) by_name_.at(name).zero_grad();
}

}  // namespace exsep
