#include "deepwarp/error.hpp"
#include "deepwarp/gauss/gauss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace deepwarp::gauss {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Rows mapped into warped space with the fit's frozen calibrations.
struct Placed {
  Matrix space;
  Vector time;
  Eigen::VectorXi process;
};

Matrix warp_frozen(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& w,
                   const warp::Calibration& cal, const Matrix& coords) {
  if (stack.empty() || coords.rows() == 0) return coords;
  return stack.forward(coords, w, &cal);
}

Placed place(const GaussFit& fit, const GaussData& data) {
  Placed out;
  const GaussSpec& spec = fit.spec;
  if (spec.kind == ModelKind::bivariate) {
    out.process = data.process;
    out.space.resize(data.size(), 2);
    for (int p = 0; p < 2; ++p) {
      std::vector<Index> rows;
      for (Index i = 0; i < data.size(); ++i) {
        if (data.process(i) == p) rows.push_back(i);
      }
      Matrix c(static_cast<Index>(rows.size()), 2);
      for (std::size_t r = 0; r < rows.size(); ++r) c.row(static_cast<Index>(r)) = data.coords.row(rows[r]);
      const Matrix w = p == 0 ? warp_frozen(spec.spatial, fit.w_spatial, fit.record.spatial, c)
                              : warp_frozen(spec.spatial2, fit.w_spatial2, fit.record.spatial2, c);
      for (std::size_t r = 0; r < rows.size(); ++r) out.space.row(rows[r]) = w.row(static_cast<Index>(r));
    }
  } else {
    out.space = warp_frozen(spec.spatial, fit.w_spatial, fit.record.spatial, data.coords);
  }
  if (spec.kind == ModelKind::spatio_temporal) {
    out.time = warp_frozen(spec.temporal, fit.w_temporal, fit.record.temporal, Matrix(data.times)).col(0);
  }
  return out;
}

double point_variance(const GaussFit& fit, const Placed& a, Index i) {
  return fit.spec.kind == ModelKind::bivariate && a.process(i) == 1 ? fit.variance2 : fit.variance;
}

double point_noise(const GaussFit& fit, const Placed& a, Index i) {
  return fit.spec.kind == ModelKind::bivariate && a.process(i) == 1 ? fit.noise2 : fit.noise;
}

double cov_entry(const GaussFit& fit, const Placed& a, Index i, const Placed& b, Index j) {
  const auto family = fit.spec.family;
  double c = covario::correlation_iso(family, fit.lengthscale, (a.space.row(i) - b.space.row(j)).norm());
  if (fit.spec.kind == ModelKind::spatio_temporal) {
    c *= covario::correlation_iso(family, fit.t_lengthscale, std::abs(a.time(i) - b.time(j)));
  }
  if (fit.spec.kind != ModelKind::bivariate) return fit.variance * c;
  const double s = std::sqrt(point_variance(fit, a, i) * point_variance(fit, b, j));
  return a.process(i) == b.process(j) ? s * c : fit.rho * s * c;
}

Matrix cross_cov(const GaussFit& fit, const Placed& a, const std::vector<Index>& ra, const Placed& b,
                 const std::vector<Index>& rb) {
  Matrix out(static_cast<Index>(ra.size()), static_cast<Index>(rb.size()));
  for (std::size_t i = 0; i < ra.size(); ++i) {
    for (std::size_t j = 0; j < rb.size(); ++j) {
      out(static_cast<Index>(i), static_cast<Index>(j)) = cov_entry(fit, a, ra[i], b, rb[j]);
    }
  }
  return out;
}

std::vector<Index> all_rows(Index n) {
  std::vector<Index> r(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) r[static_cast<std::size_t>(i)] = i;
  return r;
}

Eigen::LLT<Matrix> factor(const Matrix& s, double jitter_scale) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-8 * jitter_scale;
  Matrix sj = s;
  sj.diagonal().array() += jitter;
  llt.compute(sj);
  if (llt.info() != Eigen::Success) {
    throw CholeskyError("prediction covariance is not positive definite (jitter " + std::to_string(jitter) + " applied)", jitter);
  }
  return llt;
}

// Kriging from a training subset `rows` to one or more sites.
void krige(const GaussFit& fit, const Placed& tr, const std::vector<Index>& rows, const Matrix& xt, const Vector& zt,
           const Placed& st, const std::vector<Index>& sites, const Matrix& x0, bool latent, Vector& mean,
           Vector& var) {
  const Vector& beta = fit.record.gls.beta;
  const Matrix& bcov = fit.record.gls.beta_cov;
  Matrix s = cross_cov(fit, tr, rows, tr, rows);
  for (std::size_t i = 0; i < rows.size(); ++i) s(static_cast<Index>(i), static_cast<Index>(i)) += point_noise(fit, tr, rows[i]);
  const Eigen::LLT<Matrix> llt = factor(s, std::max(fit.variance, fit.variance2));
  const Matrix c0 = cross_cov(fit, tr, rows, st, sites);
  const Vector r = beta.size() > 0 ? Vector(zt - xt * beta) : zt;
  const Vector alpha = llt.solve(r);
  const auto lower = llt.matrixL();
  const Matrix a = lower.solve(c0);
  const Matrix wx = lower.solve(xt);
  for (std::size_t k = 0; k < sites.size(); ++k) {
    const Index j = sites[k];
    const auto kk = static_cast<Index>(k);
    double m = c0.col(kk).dot(alpha);
    double v = point_variance(fit, st, j) - a.col(kk).squaredNorm();
    if (!latent) v += point_noise(fit, st, j);
    if (beta.size() > 0) {
      m += x0.row(j).dot(beta);
      const Vector rr = x0.row(j).transpose() - wx.transpose() * a.col(kk);
      v += rr.dot(bcov * rr);
    }
    mean(j) = m;
    var(j) = v;
  }
}

std::vector<Index> nearest(const Matrix& pts, const Eigen::RowVectorXd& p, int m) {
  std::vector<std::pair<double, Index>> d(static_cast<std::size_t>(pts.rows()));
  for (Index i = 0; i < pts.rows(); ++i) d[static_cast<std::size_t>(i)] = {(pts.row(i) - p).squaredNorm(), i};
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(m), d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), d.end());
  std::vector<Index> out(take);
  for (std::size_t k = 0; k < take; ++k) out[k] = d[k].second;
  return out;
}

Matrix search_points(const GaussFit& fit, const GaussData& data) {
  Matrix pts = data.coords;
  if (fit.spec.kind == ModelKind::spatio_temporal) {
    pts.conservativeResize(Eigen::NoChange, 3);
    pts.col(2) = data.times;
  }
  return pts;
}

void predict_frk(const GaussFit& fit, const Placed& tr, const Matrix& x, const Vector& z, const Placed& st,
                 const Matrix& x0, bool latent, Vector& mean, Vector& var) {
  const Vector& beta = fit.record.gls.beta;
  const Matrix& bcov = fit.record.gls.beta_cov;
  const Index q = beta.size();
  const Vector r = q > 0 ? Vector(z - x * beta) : z;
  const FrkLayout& layout = fit.record.frk;
  const double noise = fit.noise;
  mean = q > 0 ? Vector(x0 * beta) : Vector::Zero(x0.rows());
  var = Vector::Constant(x0.rows(), latent ? 0.0 : noise);
  Matrix rt = x0.transpose();  // x0 - X' S^-1 c0, one column per site
  if (layout.side > 0) {
    const Index k = layout.centers.rows();
    const Matrix phi = bisquare_basis(tr.space, layout);
    const Matrix phi0 = bisquare_basis(st.space, layout);
    Matrix seta(k, k);
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < k; ++j) {
        seta(i, j) = fit.variance * std::exp(-(layout.centers.row(i) - layout.centers.row(j)).norm() / fit.lengthscale);
      }
    }
    // Whitened basis B = Phi L_eta; posterior precision of the whitened weights M = I + B'B / noise.
    const Matrix leta = factor(seta, fit.variance).matrixL();
    const Matrix b = phi * leta;
    const Matrix b0 = phi0 * leta;
    const Matrix btb = b.transpose() * b;
    const Eigen::LLT<Matrix> lm = factor(Matrix::Identity(k, k) + btb / noise, 1.0);
    mean += b0 * (lm.solve(b.transpose() * r) / noise);
    var += lm.matrixL().solve(b0.transpose()).colwise().squaredNorm().transpose();
    if (q > 0) {
      // X' S^-1 B by Woodbury, then X' S^-1 c0 with c0 = B b0'.
      const Matrix xtb = x.transpose() * b;
      const Matrix xsb = (xtb - xtb * lm.solve(btb) / noise) / noise;
      rt -= xsb * b0.transpose();
    }
  }
  if (q > 0) var += (rt.transpose() * bcov).cwiseProduct(rt.transpose()).rowwise().sum();
}

}  // namespace

Eigen::MatrixXd fitted_cov(const GaussFit& fit, const GaussData& a, const GaussData& b, bool add_noise) {
  const Placed pa = place(fit, a), pb = place(fit, b);
  Matrix out = cross_cov(fit, pa, all_rows(a.size()), pb, all_rows(b.size()));
  if (add_noise && a.size() == b.size()) {
    for (Index i = 0; i < a.size(); ++i) out(i, i) += point_noise(fit, pa, i);
  }
  return out;
}

PredictionResult predict(const GaussFit& fit, const GaussData& train, const GaussData& sites,
                         const PredictOptions& options) {
  const GaussModel model(fit.spec);
  model.check(train);
  const Index m = sites.size();
  if (sites.coords.rows() != m || sites.coords.cols() != 2) throw DataError("prediction sites need two coordinates");
  if (sites.x.rows() != m || sites.x.cols() != train.x.cols()) {
    throw DataError("prediction covariates do not match the fitted trend (" + std::to_string(train.x.cols()) +
                    " columns expected)");
  }
  if (fit.spec.kind == ModelKind::spatio_temporal && sites.times.size() != m) throw DataError("prediction sites need times");
  if (fit.spec.kind == ModelKind::bivariate) {
    if (sites.process.size() != m) throw DataError("prediction sites need process labels");
    if ((sites.process.array() < 0).any() || (sites.process.array() > 1).any()) throw DataError("process labels must be 0 or 1");
  }

  const Placed tr = place(fit, train), st = place(fit, sites);
  const Matrix x = model.design(train), x0 = model.design(sites);
  if (fit.record.gls.beta.size() != x.cols()) throw DataError("fitted trend does not match the design");
  PredictionResult out;
  out.mean.resize(m);
  Vector var(m);

  switch (fit.spec.backend) {
    case Backend::exact:
      if (m > 0) krige(fit, tr, all_rows(train.size()), x, train.z, st, all_rows(m), x0, options.latent, out.mean, var);
      break;
    case Backend::nngp: {
      if (options.neighbors < 1) throw ConfigError("prediction neighbours must be at least 1");
      const Matrix pts = search_points(fit, train), qpts = search_points(fit, sites);
      for (Index j = 0; j < m; ++j) {
        const std::vector<Index> nb = nearest(pts, qpts.row(j), options.neighbors);
        Matrix xn(static_cast<Index>(nb.size()), x.cols());
        Vector zn(static_cast<Index>(nb.size()));
        for (std::size_t k = 0; k < nb.size(); ++k) {
          xn.row(static_cast<Index>(k)) = x.row(nb[k]);
          zn(static_cast<Index>(k)) = train.z(nb[k]);
        }
        krige(fit, tr, nb, xn, zn, st, {j}, x0, options.latent, out.mean, var);
      }
      break;
    }
    case Backend::frk:
      predict_frk(fit, tr, x, train.z, st, x0, options.latent, out.mean, var);
      break;
  }

  out.stderr_ = var.cwiseMax(0.0).cwiseSqrt();
  out.extrapolated.assign(static_cast<std::size_t>(m), false);
  for (Index j = 0; j < m; ++j) {
    bool outside = (sites.coords.row(j).array().abs() > 0.5 + 1e-9).any();
    if (fit.spec.kind == ModelKind::spatio_temporal) outside = outside || std::abs(sites.times(j)) > 0.5 + 1e-9;
    out.extrapolated[static_cast<std::size_t>(j)] = outside;
  }
  return out;
}

double crps_gaussian(double mean, double sd, double truth) {
  const double r = truth - mean;
  if (!(sd > 0.0)) return std::abs(r);
  const double u = r / sd;
  const double cdf = 0.5 * std::erfc(-u / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
  return sd * (u * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

Scores score_predictions(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd, const Eigen::VectorXd& truth) {
  if (mean.size() != truth.size() || sd.size() != truth.size()) throw DataError("score: prediction and truth lengths differ");
  if (truth.size() == 0) throw DataError("score: no predictions");
  Scores s;
  double crps = 0.0;
  for (Index i = 0; i < truth.size(); ++i) crps += crps_gaussian(mean(i), sd(i), truth(i));
  s.rmspe = std::sqrt((mean - truth).squaredNorm() / static_cast<double>(truth.size()));
  s.crps = crps / static_cast<double>(truth.size());
  return s;
}

}  // namespace deepwarp::gauss
