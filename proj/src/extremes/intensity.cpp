#include "deepwarp/error.hpp"
#include "deepwarp/extremes/extremes.hpp"

#include <cmath>
#include <numbers>

namespace deepwarp::extremes {

namespace {

void check_gamma(const Eigen::MatrixXd& gamma, Index n) {
  if (gamma.rows() != n || gamma.cols() != n) throw std::invalid_argument("semivariogram matrix size mismatch");
  if (n < 2) throw DomainError("intensity needs at least two sites");
}

}  // namespace

IntensityValue br_log_intensity(const Eigen::MatrixXd& gamma, const Eigen::VectorXd& z, Index anchor) {
  const Index n = z.size();
  check_gamma(gamma, n);
  if ((z.array() <= 0.0).any()) throw DomainError("intensity needs positive arguments");
  if (anchor < 0 || anchor >= n) throw std::out_of_range("anchor out of range");

  std::vector<Index> rest;
  for (Index k = 0; k < n; ++k) {
    if (k != anchor) rest.push_back(k);
  }
  const Index m = n - 1;
  Eigen::MatrixXd s(m, m);
  Eigen::VectorXd omega(m);
  for (Index j = 0; j < m; ++j) {
    const Index a = rest[j];
    omega(j) = std::log(z(a) / z(anchor)) + gamma(a, anchor);
    for (Index k = 0; k < m; ++k) s(j, k) = gamma(a, anchor) + gamma(rest[k], anchor) - gamma(a, rest[k]);
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(s);
  const Eigen::VectorXd piv = llt.matrixLLT().diagonal();
  if (llt.info() != Eigen::Success || !(piv.minCoeff() > 1e-7 * std::sqrt(s.diagonal().maxCoeff()))) throw ConditioningError("anchored intensity covariance is singular", anchor);
  const Eigen::MatrixXd q = llt.solve(Eigen::MatrixXd::Identity(m, m));
  const Eigen::VectorXd y = q * omega;
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();

  IntensityValue out;
  out.log_lambda = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + logdet) -
                   2.0 * std::log(z(anchor)) - 0.5 * omega.dot(y);
  for (Index k : rest) out.log_lambda -= std::log(z(k));

  // Derivatives in log z, then the chain rule to z.
  Eigen::VectorXd g(n), h(n);
  g(anchor) = -2.0 + y.sum();
  h(anchor) = -q.sum();
  for (Index j = 0; j < m; ++j) {
    g(rest[j]) = -1.0 - y(j);
    h(rest[j]) = -q(j, j);
  }
  out.grad = g.array() / z.array();
  out.hess_diag = (h - g).array() / z.array().square();
  return out;
}

GsmWeight gsm_weight(const Risk& risk, const Eigen::VectorXd& z) {
  const double e = std::exp(1.0 - risk_eval(risk, z));
  const Eigen::VectorXd dr = risk_grad(risk, z);
  GsmWeight out;
  out.w = z * (1.0 - e);
  out.dw = (1.0 - e) + (z.array() * dr.array() * e);
  return out;
}

double gsm_score(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& events, const Risk& risk) {
  if (events.rows() == 0) throw DataError("no retained events for score matching");
  double total = 0.0;
  for (Index t = 0; t < events.rows(); ++t) {
    const Eigen::VectorXd z = events.row(t).transpose();
    const IntensityValue iv = br_log_intensity(gamma, z);
    const GsmWeight w = gsm_weight(risk, z);
    total += (2.0 * w.w.array() * w.dw.array() * iv.grad.array() + w.w.array().square() * iv.hess_diag.array() +
              0.5 * w.w.array().square() * iv.grad.array().square())
                 .sum();
  }
  return total;
}

ad::Var gsm_score(const ad::Var& gamma, const Eigen::MatrixXd& events, const Risk& risk) {
  ad::Tape& t = *gamma.tape();
  const Index n = gamma.rows();
  const Index ne = events.rows();
  if (ne == 0) throw DataError("no retained events for score matching");
  if (gamma.cols() != n || events.cols() != n) throw std::invalid_argument("gsm_score: shape mismatch");
  if (n < 2) throw DomainError("score matching needs at least two sites");
  if ((events.array() <= 0.0).any()) throw DomainError("score matching needs positive events");
  const Index m = n - 1;

  // Sites down the rows, events across the columns; anchor is site 0.
  const Eigen::MatrixXd z = events.transpose();
  Eigen::MatrixXd logratio(m, ne), w(n, ne), dw(n, ne);
  for (Index e = 0; e < ne; ++e) {
    logratio.col(e) = (z.col(e).tail(m).array() / z(0, e)).log();
    const GsmWeight gw = gsm_weight(risk, z.col(e));
    w.col(e) = gw.w;
    dw.col(e) = gw.dw;
  }

  const ad::Var g0 = ad::block(gamma, 1, 0, m, 1);
  const ad::Var s = ad::broadcast_col(g0, m) + ad::broadcast_row(ad::transpose(g0), m) - ad::block(gamma, 1, 1, m, m);
  ad::Var l;
  try {
    l = ad::cholesky(s);
  } catch (const CholeskyError&) {
    throw ConditioningError("anchored intensity covariance is singular", 0);
  }
  const ad::Var q = ad::inverse_from_chol(l);
  const ad::Var y = ad::matmul(q, t.constant(logratio) + ad::broadcast_col(g0, ne));

  const ad::Var ones_row = t.constant(Eigen::MatrixXd::Ones(1, ne));
  const ad::Var gy = ad::vcat({-2.0 + ad::col_sums(y), -1.0 - y});
  const ad::Var hy = ad::vcat({ones_row * (-ad::sum(q)), ad::broadcast_col(-ad::diag(q), ne)});
  const ad::Var grad = gy * t.constant(z.cwiseInverse());
  const ad::Var hess = (hy - gy) * t.constant(z.array().square().inverse().matrix());

  const ad::Var cross = t.constant(2.0 * w.cwiseProduct(dw));
  const ad::Var w2 = t.constant(w.array().square().matrix());
  return ad::sum(cross * grad + w2 * hess + 0.5 * (w2 * ad::square(grad)));
}

}  // namespace deepwarp::extremes
