#ifndef DSIN_TENSOR_HPP
#define DSIN_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dsin/errors.hpp"

namespace dsin {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Thread-local switch; when off, ops compute values only and record nothing.
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_enabled_flag(); }

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev_; }

 private:
  bool prev_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily, same length as values
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Local gradient rule: reads this->grad, accumulates into parents' grad.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Value-semantic handle to a node in the computation graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    if (shape.empty()) throw shape_error("tensor rank must be >= 1");
    for (int d : shape)
      if (d <= 0) throw shape_error("tensor dims must be positive, got " +
                                    shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->values.assign(shape_size(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return filled({1}, v); }

  static Tensor from(Shape shape, std::vector<double> values) {
    Tensor t = zeros(std::move(shape));
    if (values.size() != t.size())
      throw shape_error("value count does not match shape " +
                        shape_str(t.shape()));
    t.node_->values = std::move(values);
    return t;
  }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->values.size(); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  double item() const {
    if (size() != 1)
      throw value_error("item() on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
  }

  double at(std::initializer_list<int> idx) const {
    return node_->values[flat_index(idx)];
  }

  std::size_t flat_index(std::initializer_list<int> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size())
      throw value_error("index rank mismatch for " + shape_str(s));
    std::size_t flat = 0;
    int k = 0;
    for (int i : idx) {
      if (i < 0 || i >= s[k])
        throw value_error("index out of range for " + shape_str(s));
      flat = flat * static_cast<std::size_t>(s[k]) +
             static_cast<std::size_t>(i);
      ++k;
    }
    return flat;
  }

  bool all_finite() const {
    for (double v : node_->values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, const char* op,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->values.assign(shape_size(shape), 0.0);
  n->shape = std::move(shape);
  n->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

// numpy-style right-aligned broadcast shape.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out(std::max(a.size(), b.size()), 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    int db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1)
      throw shape_error(std::string(op) + ": cannot broadcast " +
                        shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` right-aligned into a broadcast result of rank `out_rank`;
// broadcast dims get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& s,
                                                  std::size_t out_rank) {
  std::vector<std::size_t> strides(out_rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t k = s.size() - 1 - i;  // axis in s, from the right
    std::size_t o = out_rank - 1 - i;
    strides[o] = (s[k] == 1) ? 0 : acc;
    acc *= static_cast<std::size_t>(s[k]);
  }
  return strides;
}

template <typename Fn>
inline void for_each_broadcast(const Shape& out, const Shape& sa,
                               const Shape& sb, Fn&& fn) {
  const std::size_t rank = out.size();
  auto stra = broadcast_strides(sa, rank);
  auto strb = broadcast_strides(sb, rank);
  std::vector<int> idx(rank, 0);
  const std::size_t total = shape_size(out);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, ia, ib);
    // odometer increment
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      ia += stra[k];
      ib += strb[k];
      if (idx[k] < out[k]) break;
      ia -= stra[k] * static_cast<std::size_t>(out[k]);
      ib -= strb[k] * static_cast<std::size_t>(out[k]);
      idx[k] = 0;
    }
  }
}

inline Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                        double (*fwd)(double, double),
                        void (*bwd)(double ga, double av, double bv,
                                    double* da, double* db)) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto an = a.node();
  auto bn = b.node();
  Tensor out = make_op(
      out_shape, name, {a, b}, [an, bn, bwd](TensorNode& self) {
        const bool na = an->requires_grad;
        const bool nb = bn->requires_grad;
        if (na) an->ensure_grad();
        if (nb) bn->ensure_grad();
        for_each_broadcast(
            self.shape, an->shape, bn->shape,
            [&](std::size_t o, std::size_t ia, std::size_t ib) {
              double da = 0, db = 0;
              bwd(self.grad[o], an->values[ia], bn->values[ib], &da, &db);
              if (na) an->grad[ia] += da;
              if (nb) bn->grad[ib] += db;
            });
      });
  auto& ov = out.values();
  for_each_broadcast(out.shape(), a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t ia, std::size_t ib) {
                       ov[o] = fwd(a.values()[ia], b.values()[ib]);
                     });
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = g;
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = -g;
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, double* da, double* db) {
        *da = g * y;
        *db = g * x;
      });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, double c) {
  return add(a, Tensor::scalar(c));
}
inline Tensor operator-(const Tensor& a, double c) {
  return sub(a, Tensor::scalar(c));
}
inline Tensor operator*(const Tensor& a, double c) {
  return mul(a, Tensor::scalar(c));
}
inline Tensor operator*(double c, const Tensor& a) { return a * c; }
inline Tensor operator-(double c, const Tensor& a) {
  return sub(Tensor::scalar(c), a);
}

namespace detail {
inline Tensor unary_op(const Tensor& a, const char* name,
                       double (*fwd)(double),
                       double (*dlocal)(double x, double y)) {
  auto an = a.node();
  Tensor out = detail::make_op(
      a.shape(), name, {a}, [an, dlocal](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i)
          an->grad[i] += self.grad[i] * dlocal(an->values[i], self.values[i]);
      });
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(a.values()[i]);
  return out;
}
}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, "sigmoid", [](double x) { return sigmoid_scalar(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// Pass-through gradient strictly inside (lo, hi), zero where clamped.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  auto an = a.node();
  Tensor out = detail::make_op(
      a.shape(), "clamp", {a}, [an, lo, hi](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i) {
          double x = an->values[i];
          if (x > lo && x < hi) an->grad[i] += self.grad[i];
        }
      });
  auto& ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i)
    ov[i] = std::min(hi, std::max(lo, a.values()[i]));
  return out;
}

namespace detail {
// Decompose shape around `axis` as outer x extent x inner.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw value_error("axis " + std::to_string(axis) + " invalid for " +
                      shape_str(s));
  AxisSplit sp;
  for (int i = 0; i < axis; ++i) sp.outer *= static_cast<std::size_t>(s[i]);
  sp.extent = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i)
    sp.inner *= static_cast<std::size_t>(s[i]);
  return sp;
}

inline Tensor reduce_op(const Tensor& a, int axis, bool mean) {
  auto sp = split_axis(a.shape(), axis);
  if (sp.extent == 0) throw value_error("empty axis extent in reduction");
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  const double w = mean ? 1.0 / static_cast<double>(sp.extent) : 1.0;
  auto an = a.node();
  Tensor out = detail::make_op(
      out_shape, mean ? "mean" : "sum", {a}, [an, sp, w](TensorNode& self) {
        an->ensure_grad();
        std::size_t o = 0;
        for (std::size_t out_i = 0; out_i < sp.outer; ++out_i)
          for (std::size_t in_i = 0; in_i < sp.inner; ++in_i, ++o) {
            const double g = self.grad[o] * w;
            std::size_t base = out_i * sp.extent * sp.inner + in_i;
            for (std::size_t k = 0; k < sp.extent; ++k)
              an->grad[base + k * sp.inner] += g;
          }
      });
  auto& ov = out.values();
  std::size_t o = 0;
  for (std::size_t out_i = 0; out_i < sp.outer; ++out_i)
    for (std::size_t in_i = 0; in_i < sp.inner; ++in_i, ++o) {
      double acc = 0;
      std::size_t base = out_i * sp.extent * sp.inner + in_i;
      for (std::size_t k = 0; k < sp.extent; ++k)
        acc += a.values()[base + k * sp.inner];
      ov[o] = acc * w;
    }
  return out;
}
}  // namespace detail

// Arithmetic mean along `axis`; the axis is kept with extent 1 so the result
// broadcasts back against the input. Gradient distributes 1/n.
inline Tensor mean_reduce(const Tensor& a, int axis) {
  return detail::reduce_op(a, axis, true);
}

inline Tensor sum_reduce(const Tensor& a, int axis) {
  return detail::reduce_op(a, axis, false);
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_size(new_shape) != a.size())
    throw shape_error("reshape " + shape_str(a.shape()) + " -> " +
                      shape_str(new_shape) + " changes element count");
  auto an = a.node();
  Tensor out = detail::make_op(
      std::move(new_shape), "reshape", {a}, [an](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.values.size(); ++i)
          an->grad[i] += self.grad[i];
      });
  out.values() = a.values();
  return out;
}

// Mean over all elements, as a [1] scalar.
inline Tensor mean_all(const Tensor& a) {
  Tensor t = a;
  for (int ax = 0; ax < static_cast<int>(a.shape().size()); ++ax)
    t = mean_reduce(t, ax);
  return reshape(t, {1});
}

// Column j of a rank-2 tensor, as [rows, 1].
inline Tensor slice_col(const Tensor& a, int j) {
  if (a.rank() != 2)
    throw shape_error("slice_col expects rank-2, got " + shape_str(a.shape()));
  const int rows = a.shape()[0], cols = a.shape()[1];
  if (j < 0 || j >= cols)
    throw value_error("column index " + std::to_string(j) +
                      " out of range for " + shape_str(a.shape()));
  auto an = a.node();
  Tensor out = detail::make_op(
      {rows, 1}, "slice_col", {a}, [an, j, cols](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t r = 0; r < self.values.size(); ++r)
          an->grad[r * cols + j] += self.grad[r];
      });
  auto& ov = out.values();
  for (int r = 0; r < rows; ++r)
    ov[static_cast<std::size_t>(r)] =
        a.values()[static_cast<std::size_t>(r) * cols + j];
  return out;
}

// Concatenate rank-2 tensors along axis 1.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw value_error("concat_cols of zero tensors");
  const int rows = parts[0].shape()[0];
  int cols = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.shape()[0] != rows)
      throw shape_error("concat_cols row mismatch: " + shape_str(p.shape()));
    cols += p.shape()[1];
  }
  std::vector<std::shared_ptr<TensorNode>> nodes;
  nodes.reserve(parts.size());
  for (const Tensor& p : parts) nodes.push_back(p.node());
  Tensor out = detail::make_op(
      {rows, cols}, "concat_cols", parts,
      [nodes, rows, cols](TensorNode& self) {
        int off = 0;
        for (auto& pn : nodes) {
          const int pc = pn->shape[1];
          if (pn->requires_grad) {
            pn->ensure_grad();
            for (int r = 0; r < rows; ++r)
              for (int c = 0; c < pc; ++c)
                pn->grad[static_cast<std::size_t>(r) * pc + c] +=
                    self.grad[static_cast<std::size_t>(r) * cols + off + c];
          }
          off += pc;
        }
      });
  auto& ov = out.values();
  int off = 0;
  for (const Tensor& p : parts) {
    const int pc = p.shape()[1];
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pc; ++c)
        ov[static_cast<std::size_t>(r) * cols + off + c] =
            p.values()[static_cast<std::size_t>(r) * pc + c];
    off += pc;
  }
  return out;
}

// out[r][c] = sum_k x[r][k] W[k][c] + b[c]
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 2 || W.rank() != 2 || b.rank() != 1 ||
      x.shape()[1] != W.shape()[0] || W.shape()[1] != b.shape()[0])
    throw shape_error("affine shapes disagree: x=" + shape_str(x.shape()) +
                      " W=" + shape_str(W.shape()) +
                      " b=" + shape_str(b.shape()));
  const int B = x.shape()[0], I = x.shape()[1], O = W.shape()[1];
  auto xn = x.node();
  auto wn = W.node();
  auto bn = b.node();
  Tensor out = detail::make_op(
      {B, O}, "affine", {x, W, b}, [xn, wn, bn, B, I, O](TensorNode& self) {
        const double* g = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int r = 0; r < B; ++r)
            for (int i = 0; i < I; ++i) {
              const double* wrow = wn->values.data() +
                                   static_cast<std::size_t>(i) * O;
              const double* grow = g + static_cast<std::size_t>(r) * O;
              double acc = 0;
              for (int c = 0; c < O; ++c) acc += grow[c] * wrow[c];
              xn->grad[static_cast<std::size_t>(r) * I + i] += acc;
            }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (int r = 0; r < B; ++r)
            for (int i = 0; i < I; ++i) {
              const double xv = xn->values[static_cast<std::size_t>(r) * I + i];
              double* wg = wn->grad.data() + static_cast<std::size_t>(i) * O;
              const double* grow = g + static_cast<std::size_t>(r) * O;
              for (int c = 0; c < O; ++c) wg[c] += xv * grow[c];
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int r = 0; r < B; ++r) {
            const double* grow = g + static_cast<std::size_t>(r) * O;
            for (int c = 0; c < O; ++c) bn->grad[c] += grow[c];
          }
        }
      });
  auto& ov = out.values();
  for (int r = 0; r < B; ++r) {
    double* orow = ov.data() + static_cast<std::size_t>(r) * O;
    for (int c = 0; c < O; ++c) orow[c] = b.values()[c];
    for (int i = 0; i < I; ++i) {
      const double xv = x.values()[static_cast<std::size_t>(r) * I + i];
      const double* wrow = W.values().data() + static_cast<std::size_t>(i) * O;
      for (int c = 0; c < O; ++c) orow[c] += xv * wrow[c];
    }
  }
  return out;
}

// Recorded operations of one backward pass, in topological order: every
// node's parents appear earlier in `order`.
struct ComputationTape {
  std::vector<TensorNode*> order;

  static ComputationTape record(const Tensor& output) {
    ComputationTape tape;
    std::unordered_set<TensorNode*> done;   // fully expanded
    std::unordered_set<TensorNode*> open;   // on the current DFS path
    struct Frame {
      TensorNode* n;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({output.node().get(), 0});
    open.insert(output.node().get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.n->parents.size()) {
        TensorNode* p = f.n->parents[f.next_parent++].get();
        if (open.count(p))
          throw error("cycle detected while building computation tape");
        if (!done.count(p) && p->requires_grad) {
          open.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        done.insert(f.n);
        open.erase(f.n);
        tape.order.push_back(f.n);
        stack.pop_back();
      }
    }
    return tape;
  }
};

// Reverse-mode sweep: seeds d(output)/d(output)=1 and applies each recorded
// rule exactly once, accumulating additively across shared uses.
inline void backward(const Tensor& output) {
  if (output.size() != 1)
    throw value_error("backward requires a scalar output, got " +
                      shape_str(output.shape()));
  if (!output.requires_grad()) return;
  ComputationTape tape = ComputationTape::record(output);
  output.node()->ensure_grad();
  output.node()->grad[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

inline void check_finite(const Tensor& t, const std::string& name) {
  for (double v : t.values())
    if (!std::isfinite(v))
      throw numeric_error("non-finite value in tensor " + name);
}

}  // namespace dsin

#endif  // DSIN_TENSOR_HPP
