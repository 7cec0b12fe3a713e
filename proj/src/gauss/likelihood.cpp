#include "deepwarp/error.hpp"
#include "deepwarp/gauss/gauss.hpp"
#include "deepwarp/util/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace deepwarp::gauss {

namespace {

using ad::Matrix;
using ad::Var;
using ad::Vector;

constexpr double kLog2Pi = 1.8378770664093454836;

void check_design(const Eigen::MatrixXd& x, Index n) {
  if (x.rows() != n) {
    throw DataError("design matrix has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(n));
  }
  if (x.cols() > n) throw DataError("more trend columns than observations");
  if (x.cols() == 0) return;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw DataError("design matrix is rank deficient");
}

double logdet_xtx(const Eigen::MatrixXd& x) {
  if (x.cols() == 0) return 0.0;
  Eigen::LLT<Matrix> llt(x.transpose() * x);
  if (llt.info() != Eigen::Success) throw DataError("design matrix is rank deficient");
  return 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
}

bool factor_ok(const Eigen::LLT<Matrix>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto d = llt.matrixLLT().diagonal();
  return d.allFinite() && (d.array() > 0.0).all();
}

// Cholesky with one jittered retry.
Eigen::LLT<Matrix> factor_with_jitter(const Matrix& s, double jitter_scale, const std::string& what) {
  Eigen::LLT<Matrix> llt(s);
  if (factor_ok(llt)) return llt;
  const double jitter = 1e-8 * jitter_scale;
  Matrix sj = s;
  sj.diagonal().array() += jitter;
  llt.compute(sj);
  if (!factor_ok(llt)) throw CholeskyError(what + " is not positive definite (jitter " + std::to_string(jitter) + " applied)", jitter);
  return llt;
}

// Cholesky of a tape matrix, retrying once with jitter on the diagonal.
Var cholesky_with_jitter(const Var& a, double jitter, const std::string& what) {
  try {
    return ad::cholesky(a);
  } catch (const CholeskyError&) {
  }
  try {
    return ad::cholesky(ad::add_diag(a, a.tape()->constant(jitter)));
  } catch (const CholeskyError&) {
    throw CholeskyError(what + " is not positive definite (jitter " + std::to_string(jitter) + " applied)", jitter);
  }
}

// Profile quadratic form of the whitened system [u V]: ||u - V beta||^2.
Var profile_quadratic(const Var& u, const Var& v, GlsResult* gls) {
  const Index q = v.cols();
  if (q == 0) {
    if (gls != nullptr) *gls = {};
    return ad::sum(ad::square(u));
  }
  const Var vt = ad::transpose(v);
  const Var lg = ad::cholesky(ad::matmul(vt, v));
  const Var beta = ad::solve_lower_transpose(lg, ad::solve_lower(lg, ad::matmul(vt, u)));
  if (gls != nullptr) {
    gls->beta = beta.value().col(0);
    const Matrix l = lg.value();
    Matrix inv = Matrix::Identity(q, q);
    l.triangularView<Eigen::Lower>().solveInPlace(inv);
    gls->beta_cov = inv.transpose() * inv;
  }
  return ad::sum(ad::square(u - ad::matmul(v, beta)));
}

}  // namespace

GlsResult gls_beta(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& x, const Eigen::VectorXd& z) {
  const Index n = z.size();
  if (sigma.rows() != n || sigma.cols() != n) throw DataError("gls_beta: covariance and response sizes differ");
  check_design(x, n);
  const Eigen::LLT<Matrix> llt = factor_with_jitter(sigma, sigma.diagonal().maxCoeff(), "covariance matrix");
  const Matrix sx = llt.solve(x);
  const Eigen::LLT<Matrix> m(x.transpose() * sx);
  if (!factor_ok(m)) throw NumericalError("X' Sigma^-1 X is not positive definite");
  GlsResult out;
  out.beta = m.solve(sx.transpose() * z);
  out.beta_cov = m.solve(Matrix::Identity(x.cols(), x.cols()));
  return out;
}

Var reml_loglik(const Var& sigma, const Eigen::MatrixXd& x, const Eigen::VectorXd& z, double jitter_scale,
                GlsResult* gls) {
  const Matrix& s = sigma.value();
  const Index n = z.size();
  if (s.rows() != n || s.cols() != n) throw DataError("reml: covariance and response sizes differ");
  check_design(x, n);
  const Index q = x.cols();

  const Eigen::LLT<Matrix> llt = factor_with_jitter(s, jitter_scale, "covariance matrix");
  Matrix l = llt.matrixL();
  const auto lower = l.triangularView<Eigen::Lower>();
  const Vector wz = lower.solve(z);
  Matrix wx = lower.solve(x);

  Eigen::LLT<Matrix> mllt;
  Vector beta = Vector::Zero(q);
  Matrix minv(q, q);
  double logdet_m = 0.0;
  if (q > 0) {
    mllt.compute(wx.transpose() * wx);
    if (!factor_ok(mllt)) throw NumericalError("X' Sigma^-1 X is not positive definite");
    beta = mllt.solve(wx.transpose() * wz);
    minv = mllt.solve(Matrix::Identity(q, q));
    logdet_m = 2.0 * mllt.matrixLLT().diagonal().array().log().sum();
  }
  Vector e = wz - wx * beta;
  const double logdet_s = 2.0 * l.diagonal().array().log().sum();
  const double value = -0.5 * static_cast<double>(n - q) * kLog2Pi + 0.5 * logdet_xtx(x) - 0.5 * logdet_s -
                       0.5 * logdet_m - 0.5 * e.squaredNorm();
  if (gls != nullptr) {
    gls->beta = beta;
    gls->beta_cov = minv;
  }

  ad::Tape& t = *sigma.tape();
  if (!t.requires_grad(sigma.index())) return t.record(Matrix::Constant(1, 1, value), {sigma}, nullptr, "reml");
  return t.record(
      Matrix::Constant(1, 1, value), {sigma},
      [is = sigma.index(), l = std::move(l), wx = std::move(wx), e = std::move(e), minv = std::move(minv)](
          ad::Tape& tp, const Matrix& g) {
        const Index n = l.rows();
        Matrix linv = Matrix::Identity(n, n);
        l.triangularView<Eigen::Lower>().solveInPlace(linv);
        Matrix sinv_lower = Matrix::Zero(n, n);
        sinv_lower.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose());
        Matrix adj = sinv_lower.selfadjointView<Eigen::Lower>();
        const auto upper = l.transpose().triangularView<Eigen::Upper>();
        const Vector piz = upper.solve(e);
        adj *= -1.0;
        if (wx.cols() > 0) {
          const Matrix px = upper.solve(wx);
          adj.noalias() += px * minv * px.transpose();
        }
        adj.noalias() += piz * piz.transpose();
        tp.accumulate(is, (0.5 * g(0, 0)) * adj);
      },
      "reml");
}

NngpStructure build_nngp_ordered(const std::vector<Index>& order, const Eigen::MatrixXd& coords, int m) {
  if (m < 1) throw ConfigError("nngp: number of neighbours must be at least 1");
  const Index n = coords.rows();
  if (static_cast<Index>(order.size()) != n) throw DataError("nngp: order length differs from number of rows");
  NngpStructure out;
  out.order = order;
  out.neighbors.resize(order.size());
  std::vector<std::pair<double, Index>> cand;
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto pi = coords.row(order[k]);
    cand.clear();
    for (std::size_t j = 0; j < k; ++j) cand.emplace_back((coords.row(order[j]) - pi).squaredNorm(), static_cast<Index>(j));
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(m), k);
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    auto& nb = out.neighbors[k];
    nb.reserve(take);
    for (std::size_t j = 0; j < take; ++j) nb.push_back(order[static_cast<std::size_t>(cand[j].second)]);
  }
  return out;
}

NngpStructure build_nngp(std::uint64_t seed, const Eigen::MatrixXd& coords, int m) {
  std::vector<Index> order(static_cast<std::size_t>(coords.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  util::Rng rng(seed);
  rng.shuffle(order);
  return build_nngp_ordered(order, coords, m);
}

Var nngp_loglik(const BlockFn& block, const NngpStructure& structure, const Eigen::MatrixXd& x,
                const Eigen::VectorXd& z, double jitter_scale, GlsResult* gls) {
  const Index n = z.size();
  if (static_cast<Index>(structure.order.size()) != n || structure.neighbors.size() != structure.order.size()) {
    throw DataError("nngp: structure does not match the data");
  }
  check_design(x, n);
  const Index q = x.cols();
  Matrix y(n, 1 + q);
  y.col(0) = z;
  y.rightCols(q) = x;

  std::vector<Var> rows, diags;
  rows.reserve(static_cast<std::size_t>(n));
  diags.reserve(static_cast<std::size_t>(n));
  std::vector<Index> idx;
  for (std::size_t k = 0; k < structure.order.size(); ++k) {
    const Index i = structure.order[k];
    idx = structure.neighbors[k];
    idx.push_back(i);
    Var l;
    try {
      l = ad::cholesky(block(idx, 0.0));
    } catch (const CholeskyError&) {
      try {
        l = ad::cholesky(block(idx, 1e-8 * jitter_scale));
      } catch (const CholeskyError&) {
        throw ConditioningError("nngp: non-positive conditional variance", static_cast<std::size_t>(i));
      }
    }
    ad::Tape& t = *l.tape();
    Matrix yb(static_cast<Index>(idx.size()), 1 + q);
    for (std::size_t r = 0; r < idx.size(); ++r) yb.row(static_cast<Index>(r)) = y.row(idx[r]);
    const Index last = static_cast<Index>(idx.size()) - 1;
    const Var w = ad::solve_lower(l, t.constant(std::move(yb)));
    rows.push_back(ad::block(w, last, 0, 1, 1 + q));
    diags.push_back(ad::block(l, last, last, 1, 1));
  }
  const Var whitened = ad::vcat(rows);
  const Var u = ad::col(whitened, 0);
  const Var v = ad::block(whitened, 0, 1, n, q);
  const Var quad = profile_quadratic(u, v, gls);
  return -0.5 * static_cast<double>(n) * kLog2Pi - ad::sum(ad::log(ad::vcat(diags))) - 0.5 * quad;
}

double bisquare_eval(const Eigen::Vector2d& center, double aperture, const Eigen::Vector2d& w) {
  if (!(aperture > 0.0)) throw DomainError("bisquare aperture must be positive");
  const double u = (w - center).norm() / aperture;
  if (u >= 1.0) return 0.0;
  const double a = 1.0 - u * u;
  return a * a;
}

int frk_side(int basis, Index n) {
  if (basis < 0) throw ConfigError("frk: basis count must be nonnegative");
  if (basis == 0) return 0;
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(basis))));
  if (side * side != basis) throw ConfigError("frk: basis count must be a perfect square, got " + std::to_string(basis));
  while (side > 0 && static_cast<Index>(side) * side > n / 2) --side;
  return side;
}

Eigen::MatrixXd bisquare_basis(const Eigen::MatrixXd& warped, const FrkLayout& layout) {
  const Index k = layout.centers.rows();
  Eigen::MatrixXd phi(warped.rows(), k);
  for (Index i = 0; i < warped.rows(); ++i) {
    for (Index j = 0; j < k; ++j) {
      phi(i, j) = bisquare_eval(layout.centers.row(j).transpose(), layout.aperture, warped.row(i).transpose());
    }
  }
  return phi;
}

Var frk_loglik(const Var& warped, int side, const Var& tau2, const Var& ell, const Var& noise,
               const Eigen::MatrixXd& x, const Eigen::VectorXd& z, FrkLayout* layout, GlsResult* gls) {
  ad::Tape& t = *warped.tape();
  const Index n = warped.rows();
  if (z.size() != n) throw DataError("frk: coordinate and response sizes differ");
  if (warped.cols() != 2) throw DataError("frk: expects two-dimensional coordinates");
  check_design(x, n);
  const Index q = x.cols();
  Matrix y(n, 1 + q);
  y.col(0) = z;
  y.rightCols(q) = x;
  const Var yty = t.constant(y.transpose() * y);

  Var g, logdet;
  if (side <= 0) {
    g = yty / noise;
    logdet = static_cast<double>(n) * ad::log(noise);
    if (layout != nullptr) *layout = {};
  } else {
    const Index k = static_cast<Index>(side) * side;
    Vector fx(k), fy(k);
    for (Index iy = 0; iy < side; ++iy) {
      for (Index ix = 0; ix < side; ++ix) {
        fx(iy * side + ix) = side == 1 ? 0.5 : static_cast<double>(ix) / (side - 1);
        fy(iy * side + ix) = side == 1 ? 0.5 : static_cast<double>(iy) / (side - 1);
      }
    }
    const Var wx = ad::col(warped, 0), wy = ad::col(warped, 1);
    const Var lx = ad::min_elem(wx), ly = ad::min_elem(wy);
    const Var dx = ad::max_elem(wx) - lx, dy = ad::max_elem(wy) - ly;
    const Var centers = ad::hcat({t.constant(fx) * dx + lx, t.constant(fy) * dy + ly});
    const Var aperture = (1.5 / std::max(side - 1, 1)) * ad::max_elem(ad::vcat({dx, dy}));
    if (!(aperture.scalar() > 0.0)) throw NumericalError("frk: warped coordinates collapse to a point");
    const Var phi = ad::bisquare(ad::pairwise_dist(warped, centers) / aperture);
    const Var seta = tau2 * ad::exp(-(ad::pairwise_dist(centers) / ell));
    const Var leta = cholesky_with_jitter(seta, 1e-8 * tau2.scalar(), "basis weight covariance");
    const Var b = ad::matmul(phi, leta);
    const Var bt = ad::transpose(b);
    const Var lm = ad::cholesky(ad::add_diag(ad::matmul(bt, b) / noise, t.constant(1.0)));
    const Var v = ad::solve_lower(lm, ad::matmul(bt, t.constant(y)));
    g = yty / noise - ad::matmul(ad::transpose(v), v) / ad::square(noise);
    logdet = static_cast<double>(n) * ad::log(noise) + ad::logdet_chol(lm);
    if (layout != nullptr) {
      layout->side = side;
      layout->centers = centers.value();
      layout->aperture = aperture.scalar();
    }
  }

  Var quad = ad::block(g, 0, 0, 1, 1);
  if (q > 0) {
    const Var lg = ad::cholesky(ad::block(g, 1, 1, q, q));
    const Var a = ad::solve_lower(lg, ad::block(g, 1, 0, q, 1));
    quad = quad - ad::sum(ad::square(a));
    if (gls != nullptr) {
      const Matrix l = lg.value();
      gls->beta = l.transpose().triangularView<Eigen::Upper>().solve(a.value()).col(0);
      Matrix inv = Matrix::Identity(q, q);
      l.triangularView<Eigen::Lower>().solveInPlace(inv);
      gls->beta_cov = inv.transpose() * inv;
    }
  } else if (gls != nullptr) {
    *gls = {};
  }
  return -0.5 * static_cast<double>(n) * kLog2Pi - 0.5 * logdet - 0.5 * quad;
}

}  // namespace deepwarp::gauss
