#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "planforge/diffmath/special.hpp"
#include "planforge/diffmath/tensor.hpp"
#include "planforge/error.hpp"

namespace planforge::diffmath {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor2& value() const;
  const Tensor2& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-threaded reverse-mode tape. Each recorded operation stores its value
/// and, if any parent requires a gradient, a closure that pushes the upstream
/// gradient into its parents. backward() walks nodes in reverse recording order.
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Tensor2& upstream, const Tensor2& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor2 value, bool requires_grad = false) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Leaf that aliases caller-owned storage; the tensor must outlive the tape.
  Var borrow(const Tensor2& value, bool requires_grad = false) {
    Node n;
    n.borrowed = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor2 value) { return leaf(std::move(value), false); }

  /// Records an operation result. `backward` is dropped when no parent needs a gradient.
  Var record(Tensor2 value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    Node n;
    n.owned = std::move(value);
    n.requires_grad = needs;
    n.is_op = true;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  /// Same as above for a runtime-sized parent list.
  Var record(Tensor2 value, std::span<const Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    Node n;
    n.owned = std::move(value);
    n.requires_grad = needs;
    n.is_op = true;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor2& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.borrowed ? *n.borrowed : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node after backward(); zeros if it received none.
  const Tensor2& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    ensure_grad(n, id);
    return n.grad;
  }

  /// Adds `g` into the gradient buffer of `v` if it participates in differentiation.
  void accumulate(const Var& v, const Tensor2& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    ensure_grad(n, v.id());
    require_same_shape(n.grad, g, "Tape::accumulate");
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Buffer to accumulate into directly, or nullptr if `v` needs no gradient.
  Tensor2* grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    ensure_grad(n, v.id());
    return &n.grad;
  }

  /// Fills gradients of every node w.r.t. the 1x1 node `loss`. Gradient buffers
  /// are reset first, so repeated calls do not accumulate. `on_visit` receives
  /// the id of each operation node whose backward closure runs.
  void backward(const Var& loss, const std::function<void(std::size_t)>& on_visit = {}) {
    if (loss.tape() != this || loss.id() >= nodes_.size()) {
      throw UsageError("backward: loss is not recorded on this tape");
    }
    if (value(loss.id()).size() != 1) {
      throw UsageError("backward: loss must be a 1x1 node, got " + shape_string(value(loss.id())));
    }
    for (Node& n : nodes_) n.grad = Tensor2();
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    ensure_grad(root, loss.id());
    root.grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      if (on_visit) on_visit(i);
      // Copy: the closure may grow other buffers but never this node's.
      const Tensor2 upstream = n.grad;
      n.backward(*this, upstream, value(i));
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool is_operation(std::size_t id) const { return nodes_.at(id).is_op; }

 private:
  struct Node {
    Tensor2 owned;
    const Tensor2* borrowed = nullptr;
    Tensor2 grad;
    bool requires_grad = false;
    bool is_op = false;
    BackwardFn backward;
  };

  void check_owner(const Var& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) {
      throw UsageError("Tape: operand belongs to a different tape");
    }
  }

  void ensure_grad(Node& n, std::size_t id) {
    const Tensor2& v = value(id);
    if (!n.grad.same_shape(v) || (n.grad.size() == 0 && v.size() != 0)) {
      n.grad = Tensor2(v.rows(), v.cols());
    }
  }

  std::vector<Node> nodes_;
};

inline const Tensor2& Var::value() const { return tape_->value(id_); }
inline const Tensor2& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (!a.tape()) throw UsageError("operation on an unbound Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw UsageError("operands live on different tapes");
  return tape_of(a);
}

// dfdx(x, y) receives the input and the already computed output.
template <class Fwd, class Dfdx>
Var unary(const Var& a, Fwd f, Dfdx dfdx) {
  Tape& t = tape_of(a);
  const Tensor2& x = a.value();
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return t.record(std::move(out), {a}, [a, dfdx](Tape& tp, const Tensor2& up, const Tensor2& y) {
    Tensor2* g = tp.grad_buffer(a);
    if (!g) return;
    const Tensor2& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) (*g)[i] += up[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  Tensor2 out = matmul(a.value(), b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* ga = tp.grad_buffer(a)) {
      const Tensor2 d = matmul_nt(up, b.value());
      for (std::size_t i = 0; i < d.size(); ++i) (*ga)[i] += d[i];
    }
    if (Tensor2* gb = tp.grad_buffer(b)) {
      const Tensor2 d = matmul_tn(a.value(), up);
      for (std::size_t i = 0; i < d.size(); ++i) (*gb)[i] += d[i];
    }
  });
}

/// a b^T, the linear-layer form x W^T.
inline Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  Tensor2 out = matmul_nt(a.value(), b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* ga = tp.grad_buffer(a)) {
      const Tensor2 d = matmul(up, b.value());
      for (std::size_t i = 0; i < d.size(); ++i) (*ga)[i] += d[i];
    }
    if (Tensor2* gb = tp.grad_buffer(b)) {
      const Tensor2 d = matmul_tn(up, a.value());
      for (std::size_t i = 0; i < d.size(); ++i) (*gb)[i] += d[i];
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor2& up, const Tensor2&) {
    tp.accumulate(a, up);
    tp.accumulate(b, up);
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor2& up, const Tensor2&) {
    tp.accumulate(a, up);
    if (Tensor2* gb = tp.grad_buffer(b))
      for (std::size_t i = 0; i < up.size(); ++i) (*gb)[i] -= up[i];
  });
}

/// Element-wise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* ga = tp.grad_buffer(a))
      for (std::size_t i = 0; i < up.size(); ++i) (*ga)[i] += up[i] * b.value()[i];
    if (Tensor2* gb = tp.grad_buffer(b))
      for (std::size_t i = 0; i < up.size(); ++i) (*gb)[i] += up[i] * a.value()[i];
  });
}

inline Var scale(const Var& a, double c) {
  Tape& t = detail::tape_of(a);
  Tensor2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return t.record(std::move(out), {a}, [a, c](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(a))
      for (std::size_t i = 0; i < up.size(); ++i) (*g)[i] += c * up[i];
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tape& t = detail::tape_of(a);
  Tensor2 out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor2& up, const Tensor2&) { tp.accumulate(a, up); });
}

/// a (m x n) plus a row vector (1 x n) added to every row.
inline Var add_row(const Var& a, const Var& row) {
  Tape& t = detail::tape_of(a, row);
  const Tensor2& x = a.value();
  const Tensor2& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError("add_row: " + shape_string(x) + " + " + shape_string(r));
  }
  Tensor2 out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) += r[j];
  return t.record(std::move(out), {a, row}, [a, row](Tape& tp, const Tensor2& up, const Tensor2&) {
    tp.accumulate(a, up);
    if (Tensor2* g = tp.grad_buffer(row))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*g)[j] += up(i, j);
  });
}

/// a (m x n) with every row multiplied element-wise by a row vector (1 x n).
inline Var mul_row(const Var& a, const Var& row) {
  Tape& t = detail::tape_of(a, row);
  const Tensor2& x = a.value();
  const Tensor2& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError("mul_row: " + shape_string(x) + " * " + shape_string(r));
  }
  Tensor2 out = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) *= r[j];
  return t.record(std::move(out), {a, row}, [a, row](Tape& tp, const Tensor2& up, const Tensor2&) {
    const Tensor2& x = a.value();
    const Tensor2& r = row.value();
    if (Tensor2* ga = tp.grad_buffer(a))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*ga)(i, j) += up(i, j) * r[j];
    if (Tensor2* gr = tp.grad_buffer(row))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*gr)[j] += up(i, j) * x(i, j);
  });
}


inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return diffmath::softplus(x); },
      [](double x, double) { return diffmath::sigmoid(x); });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return diffmath::sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Natural log; non-positive inputs are a domain error.
inline Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument");
  }
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var lgamma(const Var& a) {
  return detail::unary(
      a, [](double x) { return diffmath::lgamma(x); },
      [](double x, double) { return diffmath::digamma(x); });
}

inline Var digamma(const Var& a) {
  return detail::unary(
      a, [](double x) { return diffmath::digamma(x); },
      [](double x, double) { return diffmath::trigamma(x); });
}

/// Sum of all entries as a 1x1 node.
inline Var sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return t.record(Tensor2::scalar(acc), {a}, [a](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(a))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up[0];
  });
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Column means (m x n) -> (1 x n); pooling over rows.
inline Var mean_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  if (x.rows() == 0) throw DimensionError("mean_rows of zero rows");
  Tensor2 out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (std::size_t j = 0; j < x.cols(); ++j) out[j] *= inv;
  return t.record(std::move(out), {a}, [a, inv](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(a))
      for (std::size_t i = 0; i < g->rows(); ++i)
        for (std::size_t j = 0; j < g->cols(); ++j) (*g)(i, j) += up[j] * inv;
  });
}

/// Rows [r0, r1) of a.
inline Var slice_rows(const Var& a, std::size_t r0, std::size_t r1) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  if (r0 > r1 || r1 > x.rows()) throw DimensionError("slice_rows: range out of bounds");
  Tensor2 out(r1 - r0, x.cols());
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i - r0, j) = x(i, j);
  return t.record(std::move(out), {a}, [a, r0](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(a))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*g)(i + r0, j) += up(i, j);
  });
}

/// Columns [c0, c1) of a.
inline Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  if (c0 > c1 || c1 > x.cols()) throw DimensionError("slice_cols: range out of bounds");
  Tensor2 out(x.rows(), c1 - c0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
  return t.record(std::move(out), {a}, [a, c0](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(a))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*g)(i, j + c0) += up(i, j);
  });
}

/// Horizontal concatenation of equally tall blocks.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  Tape& t = detail::tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    detail::tape_of(parts.front(), p);
    if (p.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor2 out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& x = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, off + j) = x(i, j);
    off += x.cols();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [owned](Tape& tp, const Tensor2& up, const Tensor2&) {
    std::size_t off = 0;
    for (const Var& p : owned) {
      if (Tensor2* g = tp.grad_buffer(p))
        for (std::size_t i = 0; i < g->rows(); ++i)
          for (std::size_t j = 0; j < g->cols(); ++j) (*g)(i, j) += up(i, off + j);
      off += p.cols();
    }
  });
}

/// Vertical concatenation of equally wide blocks.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  Tape& t = detail::tape_of(parts.front());
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::tape_of(parts.front(), p);
    if (p.cols() != cols) throw DimensionError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor2 out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& x = p.value();
    std::copy(x.data().begin(), x.data().end(), out.data().begin() + off * cols);
    off += x.rows();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [owned, cols](Tape& tp, const Tensor2& up, const Tensor2&) {
    std::size_t off = 0;
    for (const Var& p : owned) {
      if (Tensor2* g = tp.grad_buffer(p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += up[off * cols + i];
      off += p.rows();
    }
  });
}

/// Selects rows of `table` by index (embedding lookup).
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  Tape& t = detail::tape_of(table);
  const Tensor2& x = table.value();
  Tensor2 out(ids.size(), x.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= x.rows()) throw InputError("gather_rows: index out of range");
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(ids[i], j);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, idx](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(table))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) (*g)(idx[i], j) += up(i, j);
  });
}

/// Selects columns of `a` by index.
inline Var pick_cols(const Var& a, std::span<const std::size_t> cols) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  Tensor2 out(x.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] >= x.cols()) throw InputError("pick_cols: index out of range");
    for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = x(i, cols[j]);
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return t.record(std::move(out), {a}, [a, idx](Tape& tp, const Tensor2& up, const Tensor2&) {
    if (Tensor2* g = tp.grad_buffer(a))
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j) (*g)(i, idx[j]) += up(i, j);
  });
}

/// Per-row log-softmax.
inline Var log_softmax_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) m = std::max(m, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor2& up, const Tensor2& y) {
    Tensor2* g = tp.grad_buffer(a);
    if (!g) return;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) s += up(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) (*g)(i, j) += up(i, j) - std::exp(y(i, j)) * s;
    }
  });
}

/// Per-row log-sum-exp, (m x n) -> (m x 1).
inline Var logsumexp_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  if (x.cols() == 0) throw DimensionError("logsumexp_rows: empty rows");
  Tensor2 out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) m = std::max(m, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - m);
    out[i] = m + std::log(s);
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor2& up, const Tensor2& y) {
    Tensor2* g = tp.grad_buffer(a);
    if (!g) return;
    const Tensor2& x = a.value();
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) (*g)(i, j) += up[i] * std::exp(x(i, j) - y[i]);
  });
}

/// Softmax over each row restricted to columns j <= i (causal attention).
/// Entries above the diagonal are exactly zero.
inline Var causal_softmax_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  if (x.rows() != x.cols()) throw DimensionError("causal_softmax_rows: square input required");
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j <= i; ++j) m = std::max(m, x(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      out(i, j) = std::exp(x(i, j) - m);
      s += out(i, j);
    }
    for (std::size_t j = 0; j <= i; ++j) out(i, j) /= s;
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor2& up, const Tensor2& y) {
    Tensor2* g = tp.grad_buffer(a);
    if (!g) return;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += up(i, j) * y(i, j);
      for (std::size_t j = 0; j <= i; ++j) (*g)(i, j) += y(i, j) * (up(i, j) - dot);
    }
  });
}

/// Row-wise RMS normalisation x / sqrt(mean(x^2) + eps) without gain.
inline Var rms_norm_rows(const Var& a, double eps = 1e-6) {
  Tape& t = detail::tape_of(a);
  const Tensor2& x = a.value();
  Tensor2 out(x.rows(), x.cols());
  std::vector<double> inv(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) ms += x(i, j) * x(i, j);
    ms /= static_cast<double>(std::max<std::size_t>(x.cols(), 1));
    inv[i] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) * inv[i];
  }
  return t.record(std::move(out), {a}, [a, inv](Tape& tp, const Tensor2& up, const Tensor2& y) {
    Tensor2* g = tp.grad_buffer(a);
    if (!g) return;
    const double n = static_cast<double>(y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += up(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        (*g)(i, j) += inv[i] * (up(i, j) - y(i, j) * dot / n);
    }
  });
}

// Operator sugar for readability in model code.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }

}  // namespace planforge::diffmath
