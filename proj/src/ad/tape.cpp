#include "deepwarp/ad/tape.hpp"

#include "deepwarp/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace deepwarp::ad {

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("ad::Var: use of an unbound variable");
  return tape_->value(index_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("ad::Var::scalar: node is not 1x1");
  return v(0, 0);
}

Var Tape::push(Node node) {
  if (check_finite_ && !node.value.allFinite()) {
    throw NumericalError(std::string("non-finite value produced by '") + node.op + "' at tape node " +
                         std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "variable";
  return push(std::move(n));
}

Var Tape::variable(double value) { return variable(Matrix::Constant(1, 1, value)); }

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward, const char* op) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::logic_error(std::string("ad: operands of '") + op + "' on different tapes");
    n.requires_grad = n.requires_grad || nodes_[p.index()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward, const char* op) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::logic_error(std::string("ad: operands of '") + op + "' on different tapes");
    n.requires_grad = n.requires_grad || nodes_[p.index()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::accumulate(std::size_t index, const Matrix& contribution) {
  Node& n = nodes_[index];
  if (!n.requires_grad) return;
  if (n.value.size() == 1 && contribution.size() != 1) {
    const double s = contribution.sum();
    if (n.adjoint.size() == 0) {
      n.adjoint = Matrix::Constant(1, 1, s);
    } else {
      n.adjoint(0, 0) += s;
    }
    return;
  }
  if (n.adjoint.size() == 0) {
    n.adjoint = contribution;
  } else {
    n.adjoint += contribution;
  }
}

Matrix& Tape::adjoint_ref(std::size_t index) {
  Node& n = nodes_[index];
  if (n.adjoint.size() == 0) n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

Matrix Tape::adjoint(const Var& v) const {
  const Node& n = nodes_[v.index()];
  if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

void Tape::backward(const Var& root) {
  if (root.tape() != this) throw std::logic_error("ad::Tape::backward: root from another tape");
  Node& r = nodes_[root.index()];
  if (r.value.size() != 1) throw std::logic_error("ad::Tape::backward: root must be 1x1");
  r.adjoint = Matrix::Constant(1, 1, 1.0);
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.adjoint.size() == 0) continue;
    n.backward(*this, n.adjoint);
  }
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("ad: operation on an unbound variable");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (!b.valid()) throw std::logic_error("ad: operation on an unbound variable");
  if (b.tape() != &t) throw std::logic_error("ad: operands on different tapes");
  return t;
}

void check_broadcast(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return;
  if (a.size() == 1 || b.size() == 1) return;
  throw std::invalid_argument(std::string("ad::") + op + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

// g has the (broadcast) output shape; x is either that shape or 1x1.
Matrix ew_mul(const Matrix& g, const Matrix& x) {
  if (x.size() == 1) return g * x(0, 0);
  return g.cwiseProduct(x);
}

Matrix ew_div(const Matrix& g, const Matrix& x) {
  if (x.size() == 1) return g / x(0, 0);
  return g.cwiseQuotient(x);
}

template <class Op>
Matrix combine(const Matrix& a, const Matrix& b, Op op) {
  if (a.size() == 1 && b.size() != 1) {
    const double s = a(0, 0);
    return b.unaryExpr([&](double y) { return op(s, y); });
  }
  if (b.size() == 1 && a.size() != 1) {
    const double s = b(0, 0);
    return a.unaryExpr([&](double x) { return op(x, s); });
  }
  return a.binaryExpr(b, op);
}

double normal_pdf_scalar(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double normal_cdf_scalar(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double log_normal_cdf_scalar(double x) {
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  if (x > -30.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - kLogSqrt2Pi + std::log1p(-1.0 / x2 + 3.0 / (x2 * x2));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Elementwise unary op whose derivative is computed eagerly from (x, y).
template <class F, class D>
Var unary(const Var& a, const char* op, F f, D deriv) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y = x.unaryExpr(f);
  Matrix d;
  if (t.requires_grad(a.index())) d = x.binaryExpr(y, deriv);
  return t.record(
      std::move(y), {a},
      [ia = a.index(), d = std::move(d)](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.cwiseProduct(d)); }, op);
}

}  // namespace

// ---------------------------------------------------------------------------
// arithmetic

Var operator+(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  check_broadcast(a.value(), b.value(), "add");
  Matrix out = combine(a.value(), b.value(), [](double x, double y) { return x + y; });
  return t.record(
      std::move(out), {a, b},
      [ia = a.index(), ib = b.index()](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
      },
      "add");
}

Var operator-(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  check_broadcast(a.value(), b.value(), "sub");
  Matrix out = combine(a.value(), b.value(), [](double x, double y) { return x - y; });
  return t.record(
      std::move(out), {a, b},
      [ia = a.index(), ib = b.index()](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, -g);
      },
      "sub");
}

Var operator*(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  check_broadcast(a.value(), b.value(), "mul");
  Matrix out = combine(a.value(), b.value(), [](double x, double y) { return x * y; });
  return t.record(
      std::move(out), {a, b},
      [ia = a.index(), ib = b.index()](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(ia)) tp.accumulate(ia, ew_mul(g, tp.value(ib)));
        if (tp.requires_grad(ib)) tp.accumulate(ib, ew_mul(g, tp.value(ia)));
      },
      "mul");
}

Var operator/(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  check_broadcast(a.value(), b.value(), "div");
  Matrix out = combine(a.value(), b.value(), [](double x, double y) { return x / y; });
  Matrix out_copy;
  if (t.requires_grad(b.index())) out_copy = out;
  return t.record(
      std::move(out), {a, b},
      [ia = a.index(), ib = b.index(), y = std::move(out_copy)](Tape& tp, const Matrix& g) {
        const Matrix& bv = tp.value(ib);
        if (tp.requires_grad(ia)) tp.accumulate(ia, ew_div(g, bv));
        if (tp.requires_grad(ib)) tp.accumulate(ib, -ew_div(g.cwiseProduct(y), bv));
      },
      "div");
}

Var operator-(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(
      -a.value(), {a}, [ia = a.index()](Tape& tp, const Matrix& g) { tp.accumulate(ia, -g); }, "neg");
}

Var operator+(const Var& a, double b) { return a + tape_of(a).constant(b); }
Var operator+(double a, const Var& b) { return tape_of(b).constant(a) + b; }
Var operator-(const Var& a, double b) { return a - tape_of(a).constant(b); }
Var operator-(double a, const Var& b) { return tape_of(b).constant(a) - b; }

Var operator*(const Var& a, double b) {
  Tape& t = tape_of(a);
  return t.record(
      a.value() * b, {a}, [ia = a.index(), b](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * b); }, "scale");
}

Var operator*(double a, const Var& b) { return b * a; }
Var operator/(const Var& a, double b) {
  Tape& t = tape_of(a);
  return t.record(
      a.value() / b, {a}, [ia = a.index(), b](Tape& tp, const Matrix& g) { tp.accumulate(ia, g / b); }, "div_scalar");
}
Var operator/(double a, const Var& b) { return tape_of(b).constant(a) / b; }

// ---------------------------------------------------------------------------
// elementwise functions

Var exp(const Var& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary(a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary(a, "softplus", softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

Var tanh(const Var& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var normal_cdf(const Var& a) {
  return unary(a, "normal_cdf", normal_cdf_scalar, [](double x, double) { return normal_pdf_scalar(x); });
}

Var log_normal_cdf(const Var& a) {
  return unary(a, "log_normal_cdf", log_normal_cdf_scalar,
               [](double x, double y) { return std::exp(-0.5 * x * x - kLogSqrt2Pi - y); });
}

Var log_add_exp(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  check_broadcast(a.value(), b.value(), "log_add_exp");
  Matrix out = combine(a.value(), b.value(), [](double x, double y) {
    const double m = std::max(x, y);
    return m + std::log1p(std::exp(-std::abs(x - y)));
  });
  return t.record(
      std::move(out), {a, b},
      [ia = a.index(), ib = b.index()](Tape& tp, const Matrix& g) {
        // d/da = sigmoid(a - b), d/db = sigmoid(b - a)
        const Matrix wa = combine(tp.value(ia), tp.value(ib), [](double x, double y) { return sigmoid_scalar(x - y); });
        tp.accumulate(ia, g.cwiseProduct(wa));
        tp.accumulate(ib, g - g.cwiseProduct(wa));
      },
      "log_add_exp");
}

Var pow(const Var& x, const Var& k) {
  Tape& t = tape_of(x, k);
  if (!k.is_scalar()) throw std::invalid_argument("ad::pow: exponent must be 1x1");
  const double kk = k.scalar();
  const Matrix& xv = x.value();
  if ((xv.array() < 0.0).any()) throw DomainError("ad::pow: negative base");
  Matrix y = xv.unaryExpr([kk](double v) { return v == 0.0 ? 0.0 : std::pow(v, kk); });
  Matrix dx, dk;
  if (t.requires_grad(x.index())) {
    dx = xv.unaryExpr([kk](double v) { return v == 0.0 ? 0.0 : kk * std::pow(v, kk - 1.0); });
  }
  if (t.requires_grad(k.index())) {
    dk = xv.binaryExpr(y, [](double v, double yv) { return v == 0.0 ? 0.0 : yv * std::log(v); });
  }
  return t.record(
      std::move(y), {x, k},
      [ix = x.index(), ik = k.index(), dx = std::move(dx), dk = std::move(dk)](Tape& tp, const Matrix& g) {
        if (dx.size() != 0) tp.accumulate(ix, g.cwiseProduct(dx));
        if (dk.size() != 0) tp.accumulate(ik, Matrix::Constant(1, 1, g.cwiseProduct(dk).sum()));
      },
      "pow");
}

Var pow(const Var& x, double k) { return pow(x, tape_of(x).constant(k)); }

Var bisquare(const Var& u) {
  return unary(
      u, "bisquare",
      [](double v) {
        if (std::abs(v) >= 1.0) return 0.0;
        const double w = 1.0 - v * v;
        return w * w;
      },
      [](double v, double) { return std::abs(v) >= 1.0 ? 0.0 : -4.0 * v * (1.0 - v * v); });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  const Eigen::Index r = a.rows(), c = a.cols();
  return t.record(
      Matrix::Constant(1, 1, a.value().sum()), {a},
      [ia = a.index(), r, c](Tape& tp, const Matrix& g) { tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0))); },
      "sum");
}

namespace {
Var extreme_elem(const Var& a, bool take_max) {
  Tape& t = tape_of(a);
  if (a.value().size() == 0) throw std::invalid_argument("ad::max_elem/min_elem: empty operand");
  Eigen::Index r = 0, c = 0;
  const double v = take_max ? a.value().maxCoeff(&r, &c) : a.value().minCoeff(&r, &c);
  return t.record(
      Matrix::Constant(1, 1, v), {a},
      [ia = a.index(), r, c](Tape& tp, const Matrix& g) { tp.adjoint_ref(ia)(r, c) += g(0, 0); },
      take_max ? "max_elem" : "min_elem");
}
}  // namespace

Var max_elem(const Var& a) { return extreme_elem(a, true); }
Var min_elem(const Var& a) { return extreme_elem(a, false); }

Var row_sums(const Var& a) {
  Tape& t = tape_of(a);
  const Eigen::Index c = a.cols();
  return t.record(
      a.value().rowwise().sum(), {a},
      [ia = a.index(), c](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.replicate(1, c)); }, "row_sums");
}

Var col_sums(const Var& a) {
  Tape& t = tape_of(a);
  const Eigen::Index r = a.rows();
  return t.record(
      a.value().colwise().sum(), {a},
      [ia = a.index(), r](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.replicate(r, 1)); }, "col_sums");
}

// ---------------------------------------------------------------------------
// shape

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(
      a.value().transpose(), {a}, [ia = a.index()](Tape& tp, const Matrix& g) { tp.accumulate(ia, g.transpose()); },
      "transpose");
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("ad::matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return t.record(
      std::move(out), {a, b},
      [ia = a.index(), ib = b.index()](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
        if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
      },
      "matmul");
}

Var col(const Var& a, Eigen::Index j) { return block(a, 0, j, a.rows(), 1); }

Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ad::hcat: no operands");
  Tape& t = tape_of(parts.front());
  const Eigen::Index r = parts.front().rows();
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("ad::hcat: row counts differ");
    c += p.cols();
  }
  Matrix out(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    slots.emplace_back(p.index(), off);
    off += p.cols();
  }
  return t.record(
      std::move(out), parts,
      [slots](Tape& tp, const Matrix& g) {
        for (const auto& [idx, o] : slots) tp.accumulate(idx, g.middleCols(o, tp.value(idx).cols()));
      },
      "hcat");
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("ad::vcat: no operands");
  Tape& t = tape_of(parts.front());
  const Eigen::Index c = parts.front().cols();
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw std::invalid_argument("ad::vcat: column counts differ");
    r += p.rows();
  }
  Matrix out(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> slots;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    slots.emplace_back(p.index(), off);
    off += p.rows();
  }
  return t.record(
      std::move(out), parts,
      [slots](Tape& tp, const Matrix& g) {
        for (const auto& [idx, o] : slots) tp.accumulate(idx, g.middleRows(o, tp.value(idx).rows()));
      },
      "vcat");
}

Var block(const Var& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = tape_of(a);
  if (row < 0 || col < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw std::out_of_range("ad::block: block outside operand");
  }
  return t.record(
      a.value().block(row, col, rows, cols), {a},
      [ia = a.index(), row, col, rows, cols](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(ia)) return;
        tp.adjoint_ref(ia).block(row, col, rows, cols) += g;
      },
      "block");
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw std::out_of_range("ad::gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  return t.record(
      std::move(out), {a},
      [ia = a.index(), rows](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(ia)) return;
        Matrix& adj = tp.adjoint_ref(ia);
        for (std::size_t i = 0; i < rows.size(); ++i) adj.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      },
      "gather_rows");
}

Var gather(const Var& a, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  Matrix out(nr, nc);
  for (Eigen::Index j = 0; j < nc; ++j) {
    for (Eigen::Index i = 0; i < nr; ++i) out(i, j) = av(rows[i], cols[j]);
  }
  return t.record(
      std::move(out), {a},
      [ia = a.index(), rows, cols](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(ia)) return;
        Matrix& adj = tp.adjoint_ref(ia);
        for (std::size_t j = 0; j < cols.size(); ++j) {
          for (std::size_t i = 0; i < rows.size(); ++i) {
            adj(rows[i], cols[j]) += g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          }
        }
      },
      "gather");
}

Var diag(const Var& a) {
  Tape& t = tape_of(a);
  if (a.rows() != a.cols()) throw std::invalid_argument("ad::diag: operand not square");
  return t.record(
      a.value().diagonal(), {a},
      [ia = a.index()](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(ia)) return;
        tp.adjoint_ref(ia).diagonal() += g.col(0);
      },
      "diag");
}

Var add_diag(const Var& a, const Var& s) {
  Tape& t = tape_of(a, s);
  if (a.rows() != a.cols()) throw std::invalid_argument("ad::add_diag: operand not square");
  const bool scalar = s.is_scalar();
  if (!scalar && (s.cols() != 1 || s.rows() != a.rows())) {
    throw std::invalid_argument("ad::add_diag: shift must be 1x1 or n x 1");
  }
  Matrix out = a.value();
  if (scalar) {
    out.diagonal().array() += s.scalar();
  } else {
    out.diagonal() += s.value().col(0);
  }
  return t.record(
      std::move(out), {a, s},
      [ia = a.index(), is = s.index(), scalar](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        if (scalar) {
          tp.accumulate(is, Matrix::Constant(1, 1, g.trace()));
        } else {
          tp.accumulate(is, Matrix(g.diagonal()));
        }
      },
      "add_diag");
}

Var scale_cols(const Var& a, const Var& v) {
  Tape& t = tape_of(a, v);
  if (v.cols() != 1 || v.rows() != a.cols()) throw std::invalid_argument("ad::scale_cols: bad scale vector");
  Matrix out = a.value() * v.value().col(0).asDiagonal();
  return t.record(
      std::move(out), {a, v},
      [ia = a.index(), iv = v.index()](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(iv).col(0).asDiagonal());
        if (tp.requires_grad(iv)) tp.accumulate(iv, g.cwiseProduct(tp.value(ia)).colwise().sum().transpose());
      },
      "scale_cols");
}

Var broadcast_col(const Var& v, Eigen::Index cols) {
  Tape& t = tape_of(v);
  if (v.cols() != 1) throw std::invalid_argument("ad::broadcast_col: operand must be a column");
  return t.record(
      v.value().replicate(1, cols), {v},
      [iv = v.index()](Tape& tp, const Matrix& g) { tp.accumulate(iv, g.rowwise().sum()); }, "broadcast_col");
}

Var broadcast_row(const Var& v, Eigen::Index rows) {
  Tape& t = tape_of(v);
  if (v.rows() != 1) throw std::invalid_argument("ad::broadcast_row: operand must be a row");
  return t.record(
      v.value().replicate(rows, 1), {v},
      [iv = v.index()](Tape& tp, const Matrix& g) { tp.accumulate(iv, g.colwise().sum()); }, "broadcast_row");
}

// ---------------------------------------------------------------------------
// linear algebra

Var cholesky(const Var& a) {
  Tape& t = tape_of(a);
  if (a.rows() != a.cols()) throw std::invalid_argument("ad::cholesky: operand not square");
  Eigen::LLT<Matrix> llt(a.value());
  if (llt.info() != Eigen::Success) throw CholeskyError("Cholesky factorisation failed: matrix not positive definite");
  Matrix l = llt.matrixL();
  if (!l.allFinite()) throw CholeskyError("Cholesky factorisation produced non-finite entries");
  Matrix l_copy;
  if (t.requires_grad(a.index())) l_copy = l;
  return t.record(
      std::move(l), {a},
      [ia = a.index(), l = std::move(l_copy)](Tape& tp, const Matrix& g) {
        // Abar = sym(L^{-T} Phi(L^T Lbar) L^{-1}), Phi: lower triangle with halved diagonal.
        Matrix p = l.transpose() * g.triangularView<Eigen::Lower>().toDenseMatrix();
        p.triangularView<Eigen::StrictlyUpper>().setZero();
        p.diagonal() *= 0.5;
        Matrix s = l.transpose().triangularView<Eigen::Upper>().solve(p);
        s = l.transpose().triangularView<Eigen::Upper>().solve(s.transpose()).transpose();
        tp.accumulate(ia, 0.5 * (s + s.transpose()));
      },
      "cholesky");
}

Var solve_lower(const Var& l, const Var& b) {
  Tape& t = tape_of(l, b);
  if (l.rows() != l.cols() || l.rows() != b.rows()) throw std::invalid_argument("ad::solve_lower: shape mismatch");
  Matrix x = l.value().triangularView<Eigen::Lower>().solve(b.value());
  Matrix x_copy;
  if (t.requires_grad(l.index())) x_copy = x;
  return t.record(
      std::move(x), {l, b},
      [il = l.index(), ib = b.index(), x = std::move(x_copy)](Tape& tp, const Matrix& g) {
        const Matrix& lv = tp.value(il);
        Matrix bbar = lv.transpose().triangularView<Eigen::Upper>().solve(g);
        if (tp.requires_grad(il)) {
          Matrix lbar = -(bbar * x.transpose());
          lbar.triangularView<Eigen::StrictlyUpper>().setZero();
          tp.accumulate(il, lbar);
        }
        tp.accumulate(ib, bbar);
      },
      "solve_lower");
}

Var solve_lower_transpose(const Var& l, const Var& b) {
  Tape& t = tape_of(l, b);
  if (l.rows() != l.cols() || l.rows() != b.rows()) {
    throw std::invalid_argument("ad::solve_lower_transpose: shape mismatch");
  }
  Matrix x = l.value().transpose().triangularView<Eigen::Upper>().solve(b.value());
  Matrix x_copy;
  if (t.requires_grad(l.index())) x_copy = x;
  return t.record(
      std::move(x), {l, b},
      [il = l.index(), ib = b.index(), x = std::move(x_copy)](Tape& tp, const Matrix& g) {
        const Matrix& lv = tp.value(il);
        Matrix bbar = lv.triangularView<Eigen::Lower>().solve(g);
        if (tp.requires_grad(il)) {
          Matrix lbar = -(x * bbar.transpose());
          lbar.triangularView<Eigen::StrictlyUpper>().setZero();
          tp.accumulate(il, lbar);
        }
        tp.accumulate(ib, bbar);
      },
      "solve_lower_transpose");
}

Var logdet_chol(const Var& l) {
  Tape& t = tape_of(l);
  if (l.rows() != l.cols()) throw std::invalid_argument("ad::logdet_chol: operand not square");
  const double v = 2.0 * l.value().diagonal().array().log().sum();
  return t.record(
      Matrix::Constant(1, 1, v), {l},
      [il = l.index()](Tape& tp, const Matrix& g) {
        if (!tp.requires_grad(il)) return;
        Matrix& adj = tp.adjoint_ref(il);
        adj.diagonal().array() += 2.0 * g(0, 0) / tp.value(il).diagonal().array();
      },
      "logdet_chol");
}

Var inverse_from_chol(const Var& l) {
  Tape& t = tape_of(l);
  const Eigen::Index n = l.rows();
  if (l.cols() != n) throw std::invalid_argument("ad::inverse_from_chol: operand not square");
  Matrix linv = l.value().triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  Matrix p = linv.transpose() * linv;
  Matrix p_copy;
  if (t.requires_grad(l.index())) p_copy = p;
  return t.record(
      std::move(p), {l},
      [il = l.index(), p = std::move(p_copy)](Tape& tp, const Matrix& g) {
        const Matrix abar = -(p * (g + g.transpose()) * p);
        Matrix lbar = abar * tp.value(il);
        lbar.triangularView<Eigen::StrictlyUpper>().setZero();
        tp.accumulate(il, lbar);
      },
      "inverse_from_chol");
}

// ---------------------------------------------------------------------------
// geometry

namespace {

Matrix dist_matrix(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = (a.row(i) - b.row(j)).norm();
  }
  return d;
}

// Gradient of sum_ij G_ij * D_ij with D the distance matrix, w.r.t. a and b.
void dist_backward(Tape& tp, std::size_t ia, std::size_t ib, const Matrix& g, const Matrix& d) {
  const Matrix& av = tp.value(ia);
  const Matrix& bv = tp.value(ib);
  const Matrix h = g.binaryExpr(d, [](double gv, double dv) { return dv > 0.0 ? gv / dv : 0.0; });
  if (tp.requires_grad(ia)) {
    Matrix ga = h.rowwise().sum().asDiagonal() * av - h * bv;
    tp.accumulate(ia, ga);
  }
  if (tp.requires_grad(ib)) {
    Matrix gb = h.colwise().sum().transpose().asDiagonal() * bv - h.transpose() * av;
    tp.accumulate(ib, gb);
  }
}

}  // namespace

Var pairwise_dist(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.cols()) throw std::invalid_argument("ad::pairwise_dist: dimension mismatch");
  Matrix d = dist_matrix(a.value(), b.value());
  Matrix d_copy;
  if (t.requires_grad(a.index()) || t.requires_grad(b.index())) d_copy = d;
  return t.record(
      std::move(d), {a, b},
      [ia = a.index(), ib = b.index(), d = std::move(d_copy)](Tape& tp, const Matrix& g) {
        dist_backward(tp, ia, ib, g, d);
      },
      "pairwise_dist");
}

Var pairwise_dist(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Eigen::Index n = av.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j + 1; i < n; ++i) {
      const double v = (av.row(i) - av.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  Matrix d_copy;
  if (t.requires_grad(a.index())) d_copy = d;
  return t.record(
      std::move(d), {a},
      [ia = a.index(), d = std::move(d_copy)](Tape& tp, const Matrix& g) {
        const Matrix gs = g + g.transpose();
        const Matrix& av = tp.value(ia);
        const Matrix h = gs.binaryExpr(d, [](double gv, double dv) { return dv > 0.0 ? gv / dv : 0.0; });
        tp.accumulate(ia, h.rowwise().sum().asDiagonal() * av - h * av);
      },
      "pairwise_dist_sym");
}

Var pairwise_sqdist(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.cols()) throw std::invalid_argument("ad::pairwise_sqdist: dimension mismatch");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix d(av.rows(), bv.rows());
  for (Eigen::Index j = 0; j < bv.rows(); ++j) {
    for (Eigen::Index i = 0; i < av.rows(); ++i) d(i, j) = (av.row(i) - bv.row(j)).squaredNorm();
  }
  return t.record(
      std::move(d), {a, b},
      [ia = a.index(), ib = b.index()](Tape& tp, const Matrix& g) {
        const Matrix& av = tp.value(ia);
        const Matrix& bv = tp.value(ib);
        if (tp.requires_grad(ia)) tp.accumulate(ia, 2.0 * (g.rowwise().sum().asDiagonal() * av - g * bv));
        if (tp.requires_grad(ib)) {
          tp.accumulate(ib, 2.0 * (g.colwise().sum().transpose().asDiagonal() * bv - g.transpose() * av));
        }
      },
      "pairwise_sqdist");
}

Var row_norms(const Var& a) {
  Tape& t = tape_of(a);
  Matrix r = a.value().rowwise().norm();
  Matrix r_copy;
  if (t.requires_grad(a.index())) r_copy = r;
  return t.record(
      std::move(r), {a},
      [ia = a.index(), r = std::move(r_copy)](Tape& tp, const Matrix& g) {
        const Matrix& av = tp.value(ia);
        Matrix ga(av.rows(), av.cols());
        for (Eigen::Index i = 0; i < av.rows(); ++i) {
          const double s = r(i, 0) > 0.0 ? g(i, 0) / r(i, 0) : 0.0;
          ga.row(i) = s * av.row(i);
        }
        tp.accumulate(ia, ga);
      },
      "row_norms");
}

}  // namespace deepwarp::ad
