#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hsbnn/errors.hpp"
#include "hsbnn/special_functions.hpp"
#include "hsbnn/tensor.hpp"

namespace hsbnn {

// Reverse-mode tape over Tensor values. The tape is rebuilt per training step
// (dynamic graph); nodes are appended in topological order, so backward is a
// single reverse sweep that visits each node exactly once.

enum class Op {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  exp_,
  log_,
  square,
  sqrt_,
  relu,
  softplus_,
  digamma_,
  lgamma_,
  matmul,
  add_rowvec,
  mul_rowvec,
  append_ones,
  sum_all,
  mean_all,
  sum_rows,
  logsumexp_rows,
  pick_cols,
};

class Tape;

// Lightweight handle to a tape node.
struct Var {
  int32_t id = -1;
  Tape* tape = nullptr;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    return push(Op::leaf, std::move(value), -1, -1, requires_grad);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant(double value) { return leaf(Tensor::scalar(value), false); }

  const Tensor& value(Var v) const { return node(v).value; }

  // Adjoint of a node after backward(); exact zeros for leaves not on the
  // path to the root.
  const Tensor& adjoint(Var v) const {
    const Node& n = node(v);
    if (n.adjoint.empty()) {
      zero_cache_ = Tensor::zeros(n.value.shape());
      return zero_cache_;
    }
    return n.adjoint;
  }

  size_t size() const { return nodes_.size(); }

  void backward(Var root) {
    Node& r = node(root);
    if (r.value.size() != 1) {
      throw ContractError("backward requires a scalar root, got shape " +
                          r.value.shape_string());
    }
    r.adjoint = Tensor::full(r.value.shape(), 1.0);
    for (int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.adjoint.empty()) continue;
      propagate(n);
    }
  }

  // ---- op builders (free-function wrappers below are the public surface) ----

  Var binary(Op op, Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    const bool a_scalar = va.rank() == 0;
    const bool b_scalar = vb.rank() == 0;
    if (!a_scalar && !b_scalar && !va.same_shape(vb)) {
      throw DimensionError("elementwise shape mismatch: " + va.shape_string() + " vs " +
                           vb.shape_string());
    }
    const Tensor& shape_src = a_scalar ? vb : va;
    Tensor out(shape_src.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) {
      const double x = va[a_scalar ? 0 : i];
      const double y = vb[b_scalar ? 0 : i];
      switch (op) {
        case Op::add: out[i] = x + y; break;
        case Op::sub: out[i] = x - y; break;
        case Op::mul: out[i] = x * y; break;
        case Op::div: out[i] = x / y; break;
        default: throw ContractError("not a binary op");
      }
    }
    return push(op, std::move(out), a.id, b.id, needs_grad(a.id) || needs_grad(b.id));
  }

  Var unary(Op op, Var a) {
    const Tensor& va = value(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < va.size(); ++i) {
      const double x = va[i];
      switch (op) {
        case Op::neg: out[i] = -x; break;
        case Op::exp_: out[i] = std::exp(x); break;
        case Op::log_:
          if (x <= 0.0) throw DomainError("log of non-positive value " + std::to_string(x));
          out[i] = std::log(x);
          break;
        case Op::square: out[i] = x * x; break;
        case Op::sqrt_:
          if (x < 0.0) throw DomainError("sqrt of negative value " + std::to_string(x));
          out[i] = std::sqrt(x);
          break;
        case Op::relu: out[i] = x > 0.0 ? x : 0.0; break;
        case Op::softplus_: out[i] = hsbnn::softplus(x); break;
        case Op::digamma_: out[i] = hsbnn::digamma(x); break;
        case Op::lgamma_: out[i] = hsbnn::log_gamma(x); break;
        default: throw ContractError("not a unary op");
      }
    }
    return push(op, std::move(out), a.id, -1, needs_grad(a.id));
  }

  Var matmul(Var a, Var b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2) {
      throw DimensionError("matmul requires rank-2 tensors, got " + va.shape_string() + " and " +
                           vb.shape_string());
    }
    if (va.cols() != vb.rows()) {
      throw DimensionError("matmul inner dimensions disagree: " + va.shape_string() + " x " +
                           vb.shape_string());
    }
    Tensor out({va.rows(), vb.cols()});
    emap(out) = cmap(va) * cmap(vb);
    return push(Op::matmul, std::move(out), a.id, b.id, needs_grad(a.id) || needs_grad(b.id));
  }

  // Row-vector broadcast over the rows of a matrix (bias-style).
  Var rowvec(Op op, Var mat, Var row) {
    const Tensor& vm = value(mat);
    const Tensor& vr = value(row);
    if (vm.rank() != 2) throw DimensionError("rowvec op requires a rank-2 left operand");
    const int64_t n = vm.cols();
    if (vr.size() != n) {
      throw DimensionError("row vector length " + std::to_string(vr.size()) +
                           " does not match matrix columns " + std::to_string(n));
    }
    Tensor out(vm.shape());
    for (int64_t i = 0; i < vm.rows(); ++i) {
      for (int64_t j = 0; j < n; ++j) {
        out(i, j) = op == Op::add_rowvec ? vm(i, j) + vr[j] : vm(i, j) * vr[j];
      }
    }
    return push(op, std::move(out), mat.id, row.id, needs_grad(mat.id) || needs_grad(row.id));
  }

  // [m x n] -> [m x (n+1)] with a trailing constant-1 column (bias input).
  Var append_ones(Var a) {
    const Tensor& va = value(a);
    if (va.rank() != 2) throw DimensionError("append_ones requires a rank-2 tensor");
    Tensor out({va.rows(), va.cols() + 1});
    for (int64_t i = 0; i < va.rows(); ++i) {
      for (int64_t j = 0; j < va.cols(); ++j) out(i, j) = va(i, j);
      out(i, va.cols()) = 1.0;
    }
    return push(Op::append_ones, std::move(out), a.id, -1, needs_grad(a.id));
  }

  Var sum(Var a) {
    const Tensor& va = value(a);
    double s = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) s += va[i];
    return push(Op::sum_all, Tensor::scalar(s), a.id, -1, needs_grad(a.id));
  }

  Var mean(Var a) {
    const Tensor& va = value(a);
    if (va.size() == 0) throw DimensionError("mean of empty tensor");
    double s = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) s += va[i];
    return push(Op::mean_all, Tensor::scalar(s / static_cast<double>(va.size())), a.id, -1,
                needs_grad(a.id));
  }

  // Column sums of a matrix: [m x n] -> [n].
  Var sum_rows(Var a) {
    const Tensor& va = value(a);
    if (va.rank() != 2) throw DimensionError("sum_rows requires a rank-2 tensor");
    Tensor out({va.cols()});
    for (int64_t i = 0; i < va.rows(); ++i) {
      for (int64_t j = 0; j < va.cols(); ++j) out[j] += va(i, j);
    }
    return push(Op::sum_rows, std::move(out), a.id, -1, needs_grad(a.id));
  }

  // Overflow-safe log-sum-exp along the last axis. [m x n] -> [m]; [n] -> scalar.
  Var logsumexp(Var a) {
    const Tensor& va = value(a);
    if (va.rank() == 1) {
      Tensor out = Tensor::scalar(lse_row(va.data(), va.size()));
      return push(Op::logsumexp_rows, std::move(out), a.id, -1, needs_grad(a.id));
    }
    if (va.rank() != 2) throw DimensionError("logsumexp requires a rank-1 or rank-2 tensor");
    Tensor out({va.rows()});
    for (int64_t i = 0; i < va.rows(); ++i) {
      out[i] = lse_row(va.data() + i * va.cols(), va.cols());
    }
    return push(Op::logsumexp_rows, std::move(out), a.id, -1, needs_grad(a.id));
  }

  // Per-row column selection: out[i] = a[i, labels[i]].
  Var pick_cols(Var a, std::vector<int64_t> labels) {
    const Tensor& va = value(a);
    if (va.rank() != 2) throw DimensionError("pick_cols requires a rank-2 tensor");
    if (static_cast<int64_t>(labels.size()) != va.rows()) {
      throw DimensionError("label count does not match rows");
    }
    Tensor out({va.rows()});
    for (int64_t i = 0; i < va.rows(); ++i) {
      const int64_t c = labels[static_cast<size_t>(i)];
      if (c < 0 || c >= va.cols()) {
        throw DomainError("label " + std::to_string(c) + " out of range [0, " +
                          std::to_string(va.cols()) + ") at row " + std::to_string(i));
      }
      out[i] = va(i, c);
    }
    Var v = push(Op::pick_cols, std::move(out), a.id, -1, needs_grad(a.id));
    node(v).labels = std::move(labels);
    return v;
  }

 private:
  struct Node {
    Op op = Op::leaf;
    int32_t a = -1;
    int32_t b = -1;
    bool requires_grad = false;
    Tensor value;
    Tensor adjoint;               // lazily allocated during backward
    std::vector<int64_t> labels;  // pick_cols only
  };

  using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  static Eigen::Map<const EMat> cmap(const Tensor& t) {
    return Eigen::Map<const EMat>(t.data(), t.rows(), t.cols());
  }
  static Eigen::Map<EMat> emap(Tensor& t) {
    return Eigen::Map<EMat>(t.data(), t.rows(), t.cols());
  }

  static double lse_row(const double* x, int64_t n) {
    double m = x[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    return m + std::log(s);
  }

  Node& node(Var v) {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node& node(Var v) const {
    check(v);
    return nodes_[static_cast<size_t>(v.id)];
  }

  void check(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int32_t>(nodes_.size())) {
      throw ContractError("Var does not belong to this tape");
    }
  }

  

  Var push(Op op, Tensor value, int32_t a, int32_t b, bool requires_grad) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1), this};
  }

  Tensor& grad_buffer(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.adjoint.empty()) n.adjoint = Tensor::zeros(n.value.shape());
    return n.adjoint;
  }

  bool needs_grad(int32_t id) const {
    return id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad;
  }

  // Accumulate g (shaped like the output) into input `id`, reducing over the
  // broadcast if the input is a one-element tensor.
  void accumulate(int32_t id, const Tensor& g) {
    if (!needs_grad(id)) return;
    Tensor& dst = grad_buffer(id);
    if (dst.size() == g.size()) {
      for (int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    } else if (dst.size() == 1) {
      double s = 0.0;
      for (int64_t i = 0; i < g.size(); ++i) s += g[i];
      dst[0] += s;
    } else {
      throw DimensionError("adjoint accumulation shape mismatch");
    }
  }

  void propagate(Node& n) {
    const Tensor& g = n.adjoint;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add: {
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      }
      case Op::sub: {
        accumulate(n.a, g);
        if (needs_grad(n.b)) {
          Tensor neg_g(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) neg_g[i] = -g[i];
          accumulate(n.b, neg_g);
        }
        break;
      }
      case Op::mul: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
        const bool a_scalar = va.size() == 1;
        const bool b_scalar = vb.size() == 1;
        if (needs_grad(n.a)) {
          Tensor ga(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * vb[b_scalar ? 0 : i];
          accumulate(n.a, ga);
        }
        if (needs_grad(n.b)) {
          Tensor gb(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) gb[i] = g[i] * va[a_scalar ? 0 : i];
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::div: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
        const bool a_scalar = va.size() == 1;
        const bool b_scalar = vb.size() == 1;
        if (needs_grad(n.a)) {
          Tensor ga(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] / vb[b_scalar ? 0 : i];
          accumulate(n.a, ga);
        }
        if (needs_grad(n.b)) {
          Tensor gb(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) {
            const double bv = vb[b_scalar ? 0 : i];
            gb[i] = -g[i] * va[a_scalar ? 0 : i] / (bv * bv);
          }
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::neg:
      case Op::exp_:
      case Op::log_:
      case Op::square:
      case Op::sqrt_:
      case Op::relu:
      case Op::softplus_:
      case Op::digamma_:
      case Op::lgamma_: {
        if (!needs_grad(n.a)) break;
        const Tensor& x = nodes_[static_cast<size_t>(n.a)].value;
        Tensor ga(g.shape());
        for (int64_t i = 0; i < g.size(); ++i) {
          double d = 0.0;
          switch (n.op) {
            case Op::neg: d = -1.0; break;
            case Op::exp_: d = n.value[i]; break;
            case Op::log_: d = 1.0 / x[i]; break;
            case Op::square: d = 2.0 * x[i]; break;
            case Op::sqrt_: d = 0.5 / n.value[i]; break;
            case Op::relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;  // subgradient at 0 is 0
            case Op::softplus_: d = hsbnn::sigmoid(x[i]); break;
            case Op::digamma_: d = hsbnn::trigamma(x[i]); break;
            case Op::lgamma_: d = hsbnn::digamma(x[i]); break;
            default: break;
          }
          ga[i] = g[i] * d;
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::matmul: {
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<size_t>(n.b)].value;
        if (needs_grad(n.a)) {
          Tensor ga(va.shape());
          emap(ga) = cmap(g) * cmap(vb).transpose();
          accumulate(n.a, ga);
        }
        if (needs_grad(n.b)) {
          Tensor gb(vb.shape());
          emap(gb) = cmap(va).transpose() * cmap(g);
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::add_rowvec:
      case Op::mul_rowvec: {
        const Tensor& vm = nodes_[static_cast<size_t>(n.a)].value;
        const Tensor& vr = nodes_[static_cast<size_t>(n.b)].value;
        if (needs_grad(n.a)) {
          Tensor gm(vm.shape());
          for (int64_t i = 0; i < vm.rows(); ++i) {
            for (int64_t j = 0; j < vm.cols(); ++j) {
              gm(i, j) = n.op == Op::add_rowvec ? g(i, j) : g(i, j) * vr[j];
            }
          }
          accumulate(n.a, gm);
        }
        if (needs_grad(n.b)) {
          Tensor gr(vr.shape());
          for (int64_t i = 0; i < vm.rows(); ++i) {
            for (int64_t j = 0; j < vm.cols(); ++j) {
              gr[j] += n.op == Op::add_rowvec ? g(i, j) : g(i, j) * vm(i, j);
            }
          }
          accumulate(n.b, gr);
        }
        break;
      }
      case Op::append_ones: {
        if (!needs_grad(n.a)) break;
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor ga(va.shape());
        for (int64_t i = 0; i < va.rows(); ++i) {
          for (int64_t j = 0; j < va.cols(); ++j) ga(i, j) = g(i, j);
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::sum_all: {
        if (!needs_grad(n.a)) break;
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        accumulate(n.a, Tensor::full(va.shape(), g[0]));
        break;
      }
      case Op::mean_all: {
        if (!needs_grad(n.a)) break;
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        accumulate(n.a, Tensor::full(va.shape(), g[0] / static_cast<double>(va.size())));
        break;
      }
      case Op::sum_rows: {
        if (!needs_grad(n.a)) break;
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor ga(va.shape());
        for (int64_t i = 0; i < va.rows(); ++i) {
          for (int64_t j = 0; j < va.cols(); ++j) ga(i, j) = g[j];
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::logsumexp_rows: {
        if (!needs_grad(n.a)) break;
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor ga(va.shape());
        const int64_t rows = va.rank() == 1 ? 1 : va.rows();
        const int64_t cols = va.rank() == 1 ? va.size() : va.cols();
        for (int64_t i = 0; i < rows; ++i) {
          const double lse = n.value[i];
          const double gi = g[i];
          for (int64_t j = 0; j < cols; ++j) {
            ga[i * cols + j] = gi * std::exp(va[i * cols + j] - lse);
          }
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::pick_cols: {
        if (!needs_grad(n.a)) break;
        const Tensor& va = nodes_[static_cast<size_t>(n.a)].value;
        Tensor ga(va.shape());
        for (int64_t i = 0; i < va.rows(); ++i) {
          ga(i, n.labels[static_cast<size_t>(i)]) += g[i];
        }
        accumulate(n.a, ga);
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  mutable Tensor zero_cache_;
};

// ---- free-function surface ----

inline void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands belong to different tapes");
}

inline Var operator+(Var a, Var b) { check_same_tape(a, b); return a.tape->binary(Op::add, a, b); }
inline Var operator-(Var a, Var b) { check_same_tape(a, b); return a.tape->binary(Op::sub, a, b); }
inline Var operator*(Var a, Var b) { check_same_tape(a, b); return a.tape->binary(Op::mul, a, b); }
inline Var operator/(Var a, Var b) { check_same_tape(a, b); return a.tape->binary(Op::div, a, b); }

inline Var operator+(Var a, double b) { return a + a.tape->constant(b); }
inline Var operator+(double a, Var b) { return b.tape->constant(a) + b; }
inline Var operator-(Var a, double b) { return a - a.tape->constant(b); }
inline Var operator-(double a, Var b) { return b.tape->constant(a) - b; }
inline Var operator*(Var a, double b) { return a * a.tape->constant(b); }
inline Var operator*(double a, Var b) { return b.tape->constant(a) * b; }
inline Var operator/(Var a, double b) { return a / a.tape->constant(b); }
inline Var operator/(double a, Var b) { return b.tape->constant(a) / b; }
inline Var operator-(Var a) { return a.tape->unary(Op::neg, a); }

inline Var exp(Var a) { return a.tape->unary(Op::exp_, a); }
inline Var log(Var a) { return a.tape->unary(Op::log_, a); }
inline Var square(Var a) { return a.tape->unary(Op::square, a); }
inline Var sqrt(Var a) { return a.tape->unary(Op::sqrt_, a); }
inline Var relu(Var a) { return a.tape->unary(Op::relu, a); }
inline Var softplus(Var a) { return a.tape->unary(Op::softplus_, a); }
inline Var digamma(Var a) { return a.tape->unary(Op::digamma_, a); }
inline Var lgamma(Var a) { return a.tape->unary(Op::lgamma_, a); }

inline Var matmul(Var a, Var b) { check_same_tape(a, b); return a.tape->matmul(a, b); }
inline Var add_rowvec(Var mat, Var row) {
  check_same_tape(mat, row);
  return mat.tape->rowvec(Op::add_rowvec, mat, row);
}
inline Var mul_rowvec(Var mat, Var row) {
  check_same_tape(mat, row);
  return mat.tape->rowvec(Op::mul_rowvec, mat, row);
}
inline Var append_ones_column(Var a) { return a.tape->append_ones(a); }
inline Var sum(Var a) { return a.tape->sum(a); }
inline Var mean(Var a) { return a.tape->mean(a); }
inline Var sum_rows(Var a) { return a.tape->sum_rows(a); }
inline Var logsumexp(Var a) { return a.tape->logsumexp(a); }
inline Var pick_columns(Var a, std::vector<int64_t> labels) {
  return a.tape->pick_cols(a, std::move(labels));
}

}  // namespace hsbnn
