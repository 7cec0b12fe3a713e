#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// Every value on the tape is an Eigen matrix; scalars are 1x1 matrices and
// broadcast against any shape in the elementwise operations. A Tape is a
// single-writer record: build the expression, call backward() once on a 1x1
// root, then read adjoints of the leaves created with variable().

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace deepwarp::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double scalar() const;  // value of a 1x1 node
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  Var variable(Matrix value);
  Var variable(double value);

  // Appends an operation node. The backward closure receives the node's
  // adjoint and must accumulate into the parents via accumulate().
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward, const char* op);
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward, const char* op);

  void backward(const Var& root);

  const Matrix& value(std::size_t index) const { return nodes_[index].value; }
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }

  // Adjoint of a node after backward(); zeros if the node received no gradient.
  Matrix adjoint(const Var& v) const;

  // Adds `contribution` to the adjoint of node `index`. A contribution whose
  // shape differs from a 1x1 target is summed (scalar broadcast).
  void accumulate(std::size_t index, const Matrix& contribution);
  // Mutable adjoint of node `index`, zero-initialised on first access.
  Matrix& adjoint_ref(std::size_t index);

  std::size_t size() const { return nodes_.size(); }
  // Throw on non-finite forward values (on by default).
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool requires_grad = false;
    Backward backward;
    const char* op = "";
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool check_finite_ = true;
};

// ---- elementwise arithmetic (1x1 operands broadcast) ----
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);  // elementwise
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);
Var operator/(double a, const Var& b);

// ---- elementwise functions ----
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var tanh(const Var& a);
Var normal_cdf(const Var& a);
Var log_normal_cdf(const Var& a);
Var log_add_exp(const Var& a, const Var& b);
// x^k with scalar exponent k; derivatives are taken as zero where x == 0.
Var pow(const Var& x, const Var& k);
Var pow(const Var& x, double k);
// (1 - u^2)^2 for u < 1, else 0.
Var bisquare(const Var& u);

// ---- reductions ----
Var sum(const Var& a);
Var max_elem(const Var& a);
Var min_elem(const Var& a);
Var row_sums(const Var& a);  // n x 1
Var col_sums(const Var& a);  // 1 x m

// ---- shape ----
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);
Var col(const Var& a, Eigen::Index j);
Var hcat(const std::vector<Var>& parts);
Var vcat(const std::vector<Var>& parts);
Var block(const Var& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& rows);
Var gather(const Var& a, const std::vector<Eigen::Index>& rows, const std::vector<Eigen::Index>& cols);
Var diag(const Var& a);                       // n x 1 from the diagonal of a square matrix
Var add_diag(const Var& a, const Var& s);     // a + diag(s), s 1x1 or n x 1
Var scale_cols(const Var& a, const Var& v);   // a * diag(v), v is m x 1
Var broadcast_col(const Var& v, Eigen::Index cols);  // n x 1 -> n x cols
Var broadcast_row(const Var& v, Eigen::Index rows);  // 1 x m -> rows x m

// ---- linear algebra ----
// Lower Cholesky factor of a symmetric positive definite matrix (lower triangle read).
Var cholesky(const Var& a);
// L^{-1} b for lower-triangular L.
Var solve_lower(const Var& l, const Var& b);
// L^{-T} b for lower-triangular L.
Var solve_lower_transpose(const Var& l, const Var& b);
// log det(L L^T) = 2 sum log diag(L).
Var logdet_chol(const Var& l);
// (L L^T)^{-1}.
Var inverse_from_chol(const Var& l);

// ---- geometry ----
// Euclidean distances between rows of a (n x d) and rows of b (m x d).
Var pairwise_dist(const Var& a, const Var& b);
// Symmetric distance matrix among rows of a.
Var pairwise_dist(const Var& a);
Var pairwise_sqdist(const Var& a, const Var& b);
// Euclidean norm of each row (n x 1).
Var row_norms(const Var& a);

}  // namespace deepwarp::ad
