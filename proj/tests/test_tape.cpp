#include "deepwarp/ad/tape.hpp"
#include "deepwarp/error.hpp"
#include "fd_check.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace deepwarp::ad;
using testutil::check_gradient;
using testutil::random_matrix;
using testutil::random_spd;

namespace {

constexpr double kTol = 1e-6;

void expect_grad(const testutil::Expr& f, const std::vector<Matrix>& in, double tol = kTol) {
  const auto r = check_gradient(f, in);
  EXPECT_LT(r.max_rel, tol) << "max abs err " << r.max_abs;
}

}  // namespace

TEST(Tape, ForwardValues) {
  Tape t;
  Var a = t.variable(2.0);
  Var b = t.variable(3.0);
  EXPECT_DOUBLE_EQ((a * b + a / b - b).scalar(), 6.0 + 2.0 / 3.0 - 3.0);
  EXPECT_DOUBLE_EQ(exp(log(a)).scalar(), 2.0);
  EXPECT_NEAR(normal_cdf(t.constant(0.0)).scalar(), 0.5, 1e-15);
  EXPECT_NEAR(log_normal_cdf(t.constant(-40.0)).scalar(), -804.608442013753788, 1e-8);
}

TEST(Tape, QuadraticGradientIsIdentity) {
  Tape t;
  Matrix p(3, 1);
  p << 1.0, -2.0, 0.5;
  Var v = t.variable(p);
  Var loss = 0.5 * sum(square(v));
  t.backward(loss);
  EXPECT_TRUE(t.adjoint(v).isApprox(p));
}

TEST(Tape, ConstantLossHasZeroGradient) {
  Tape t;
  Var v = t.variable(Matrix::Ones(2, 2));
  Var loss = sum(t.constant(Matrix::Ones(2, 2))) + 0.0 * sum(v);
  t.backward(loss);
  EXPECT_EQ(t.adjoint(v).norm(), 0.0);
}

TEST(Tape, NonFiniteForwardThrows) {
  Tape t;
  Var v = t.variable(-1.0);
  EXPECT_THROW(log(v), deepwarp::NumericalError);
}

TEST(Tape, ElementwiseGradients) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(rng, 3, 2, 0.2, 1.5);
  const Matrix b = random_matrix(rng, 3, 2, 0.2, 1.5);
  const Matrix s = random_matrix(rng, 1, 1, 0.5, 1.0);
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(v[0] * v[1] - v[0] / v[1] + v[2] * v[0]); },
              {a, b, s});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(exp(v[0]) + log(v[1]) + sqrt(v[0]) + square(v[1])); },
              {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0]) * softplus(v[1]) + tanh(v[0] - v[1])); },
              {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(normal_cdf(v[0]) + log_normal_cdf(-3.0 * v[1])); },
              {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(log_add_exp(v[0], 2.0 * v[1])); }, {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(pow(v[0], v[1] + 0.5)); }, {a, s});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(bisquare(v[0] * 0.6)); }, {a});
  expect_grad([](Tape&, const std::vector<Var>& v) { return -v[0] * 3.0 + 2.0 / v[0] - (1.0 - v[0]); }, {s});
}

TEST(Tape, ReductionAndShapeGradients) {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(rng, 4, 3);
  const Matrix b = random_matrix(rng, 3, 2);
  const Matrix w = random_matrix(rng, 4, 1);
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(square(matmul(v[0], v[1]))); }, {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) { return max_elem(v[0]) - 2.0 * min_elem(v[0]); }, {a});
  expect_grad([&](Tape&, const std::vector<Var>& v) {
    return sum(square(row_sums(v[0]) * v[2])) + sum(square(col_sums(v[0])));
  }, {a, b, w});
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var c = hcat({col(v[0], 2), col(v[0], 0)});
    Var r = vcat({block(v[0], 1, 0, 2, 3), transpose(v[1])});
    return sum(square(c)) + sum(exp(r));
  }, {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var g = gather_rows(v[0], {3, 0, 3});
    Var h = gather(v[0], {1, 2}, {2, 0});
    return sum(square(g)) + sum(h * h * h);
  }, {a});
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var sc = scale_cols(v[0], transpose(block(v[1], 0, 0, 1, 3)));
    Var bc = broadcast_col(v[2], 3) * v[0];
    Var br = broadcast_row(block(v[1], 1, 0, 1, 3), 4);
    return sum(square(sc)) + sum(bc) + sum(br * v[0]);
  }, {a, Matrix(b.transpose()), w});
}

// Cholesky reads one triangle, so perturbations go through a symmetric parametrization.
Var sym(const Var& a) { return 0.5 * (a + transpose(a)); }

TEST(Tape, LinearAlgebraGradients) {
  std::mt19937_64 rng(3);
  const Matrix a = random_spd(rng, 4);
  const Matrix b = random_matrix(rng, 4, 2);
  const Matrix s = Matrix::Constant(1, 1, 0.3);
  expect_grad([](Tape&, const std::vector<Var>& v) { return logdet_chol(cholesky(sym(v[0]))); }, {a});
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var l = cholesky(add_diag(sym(v[0]), v[2]));
    return sum(square(solve_lower(l, v[1])));
  }, {a, b, s});
  const Matrix d = random_matrix(rng, 4, 1, 0.1, 0.5);
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var l = cholesky(add_diag(sym(v[0]), v[2]));
    return sum(square(solve_lower(l, v[1])));
  }, {a, b, d});
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var l = cholesky(sym(v[0]));
    return sum(solve_lower_transpose(l, v[1]) * v[1]);
  }, {a, b});
  expect_grad([](Tape&, const std::vector<Var>& v) {
    Var p = inverse_from_chol(cholesky(sym(v[0])));
    return sum(matmul(transpose(v[1]), matmul(p, v[1]))) + sum(diag(p));
  }, {a, b});
}

TEST(Tape, CholeskyMatchesEigen) {
  std::mt19937_64 rng(4);
  const Matrix a = random_spd(rng, 5);
  Tape t;
  Var l = cholesky(t.constant(a));
  Matrix ref = a.llt().matrixL();
  EXPECT_TRUE(l.value().isApprox(ref, 1e-14));
  EXPECT_NEAR(logdet_chol(l).scalar(), std::log(a.determinant()), 1e-12);
}

TEST(Tape, CholeskyOfIndefiniteThrows) {
  Tape t;
  Matrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(cholesky(t.constant(a)), deepwarp::CholeskyError);
}

TEST(Tape, DistanceGradients) {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(rng, 5, 2);
  const Matrix y = random_matrix(rng, 3, 2);
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(exp(-pairwise_dist(v[0], v[1]))); }, {x, y});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(exp(-pairwise_dist(v[0]))); }, {x});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(pairwise_sqdist(v[0], v[1])); }, {x, y});
  expect_grad([](Tape&, const std::vector<Var>& v) { return sum(row_norms(v[0])); }, {x});
}

TEST(Tape, SymmetricDistanceHasZeroDiagonal) {
  Tape t;
  Matrix x(3, 2);
  x << 0, 0, 3, 4, 1, 1;
  Var d = pairwise_dist(t.constant(x));
  EXPECT_EQ(d.value()(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(d.value()(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(d.value()(1, 0), 5.0);
}
