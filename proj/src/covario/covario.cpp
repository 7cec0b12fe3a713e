#include "deepwarp/covario/covario.hpp"

#include "deepwarp/error.hpp"

#include <cmath>

namespace deepwarp::covario {

namespace {

constexpr double kSqrt3 = 1.7320508075688772935;

void check_distance(double h) {
  if (!(h >= 0.0)) throw DomainError("distance must be nonnegative, got " + std::to_string(h));
}

}  // namespace

CovFamily parse_family(std::string_view name) {
  if (name == "exponential" || name == "exp" || name == "exp_nonstat") return CovFamily::exponential;
  if (name == "matern32" || name == "matern_nonstat") return CovFamily::matern32;
  throw ConfigError("unknown covariance family '" + std::string(name) + "'");
}

std::string family_name(CovFamily family) {
  return family == CovFamily::exponential ? "exponential" : "matern32";
}

double correlation_iso(CovFamily family, double lengthscale, double h) {
  check_distance(h);
  if (!(lengthscale > 0.0)) throw DomainError("lengthscale must be positive");
  if (family == CovFamily::exponential) return std::exp(-h / lengthscale);
  const double a = kSqrt3 * h / lengthscale;
  return (1.0 + a) * std::exp(-a);
}

double cov_iso(const CovParams& p, double h) { return p.variance * correlation_iso(p.family, p.lengthscale, h); }

double vario_power(const VarioParams& p, double h) {
  check_distance(h);
  if (!(p.range > 0.0)) throw DomainError("variogram range must be positive");
  if (!(p.smoothness > 0.0 && p.smoothness <= 2.0)) throw DomainError("variogram smoothness must lie in (0, 2]");
  if (h == 0.0) return 0.0;
  return std::pow(h / p.range, p.smoothness);
}

ad::Var correlation(CovFamily family, const ad::Var& dist, const ad::Var& lengthscale) {
  if (family == CovFamily::exponential) return ad::exp(-(dist / lengthscale));
  const ad::Var a = (kSqrt3 * dist) / lengthscale;
  return (1.0 + a) * ad::exp(-a);
}

ad::Var covariance(CovFamily family, const ad::Var& dist, const ad::Var& variance, const ad::Var& lengthscale) {
  return variance * correlation(family, dist, lengthscale);
}

ad::Var semivariogram(const ad::Var& dist, const ad::Var& range, const ad::Var& smoothness) {
  return ad::pow(dist / range, smoothness);
}

Eigen::MatrixXd nonstat_cov_matrix(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& weights,
                                   const warp::Calibration* calibration, const CovParams& params,
                                   const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2) {
  warp::Calibration fitted;
  if (calibration == nullptr) {
    stack.forward(s1, weights, nullptr, &fitted);
    calibration = &fitted;
  }
  const Eigen::MatrixXd w1 = stack.forward(s1, weights, calibration);
  const Eigen::MatrixXd w2 = stack.forward(s2, weights, calibration);
  Eigen::MatrixXd out(w1.rows(), w2.rows());
  for (Eigen::Index i = 0; i < w1.rows(); ++i) {
    for (Eigen::Index j = 0; j < w2.rows(); ++j) out(i, j) = cov_iso(params, (w1.row(i) - w2.row(j)).norm());
  }
  return out;
}

double nonstat_vario(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& weights,
                     const warp::Calibration& calibration, const VarioParams& params, const Eigen::Vector2d& s1,
                     const Eigen::Vector2d& s2) {
  Eigen::MatrixXd p(2, 2);
  p.row(0) = s1.transpose();
  p.row(1) = s2.transpose();
  const Eigen::MatrixXd w = stack.forward(p, weights, &calibration);
  return vario_power(params, (w.row(0) - w.row(1)).norm());
}

Eigen::MatrixXd WarpedField::apply(const Eigen::MatrixXd& coords) const {
  if (stack == nullptr) return coords;
  return stack->forward(coords, weights, &calibration);
}

double st_sep_cov(const WarpedField& spatial, const WarpedField& temporal, const StParams& params,
                  const Eigen::Vector2d& s1, double t1, const Eigen::Vector2d& s2, double t2) {
  Eigen::MatrixXd s(2, 2), t(2, 1);
  s.row(0) = s1.transpose();
  s.row(1) = s2.transpose();
  t << t1, t2;
  const Eigen::MatrixXd ws = spatial.apply(s);
  const Eigen::MatrixXd wt = temporal.apply(t);
  return cov_iso(params.spatial, (ws.row(0) - ws.row(1)).norm()) *
         cov_iso(params.temporal, std::abs(wt(0, 0) - wt(1, 0)));
}

void validate_cross(const CrossCovParams& params) {
  if (params.first.family != params.second.family) {
    throw ConfigError("bivariate model: both processes must share the covariance family");
  }
  if (params.first.lengthscale != params.second.lengthscale) {
    throw ConfigError("bivariate model: both processes must share the lengthscale");
  }
  if (!(std::abs(params.rho) <= 1.0)) throw ConfigError("bivariate model: |rho| must not exceed 1");
}

double cross_cov(const WarpedField& f1, const WarpedField& f2, const CrossCovParams& params, int p1, int p2,
                 const Eigen::Vector2d& s1, const Eigen::Vector2d& s2) {
  if (p1 < 1 || p1 > 2 || p2 < 1 || p2 > 2) throw std::out_of_range("cross_cov: process index must be 1 or 2");
  validate_cross(params);
  const WarpedField& g1 = p1 == 1 ? f1 : f2;
  const WarpedField& g2 = p2 == 1 ? f1 : f2;
  const Eigen::RowVectorXd w1 = g1.apply(s1.transpose()).row(0);
  const Eigen::RowVectorXd w2 = g2.apply(s2.transpose()).row(0);
  const double h = (w1 - w2).norm();
  const CovParams& a = p1 == 1 ? params.first : params.second;
  const CovParams& b = p2 == 1 ? params.first : params.second;
  if (p1 == p2) return cov_iso(a, h);
  return params.rho * std::sqrt(a.variance * b.variance) * correlation_iso(a.family, a.lengthscale, h);
}

}  // namespace deepwarp::covario
