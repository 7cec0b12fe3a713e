#include "deepwarp/error.hpp"
#include "deepwarp/extremes/extremes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace deepwarp::extremes {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kDensityFloor = 1e-300;

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

void check_args(double gamma, double z1, double z2) {
  if (!(z1 > 0.0) || !(z2 > 0.0)) throw DomainError("exponent function needs positive arguments");
  if (!(gamma >= 0.0)) throw DomainError("semivariogram value must be nonnegative");
}

}  // namespace

double exponent_V(double gamma, double z1, double z2) {
  check_args(gamma, z1, z2);
  if (gamma == 0.0) return 1.0 / std::min(z1, z2);
  if (std::isinf(gamma)) return 1.0 / z1 + 1.0 / z2;
  const double a = std::sqrt(2.0 * gamma);
  const double l = std::log(z2 / z1);
  return norm_cdf(0.5 * a + l / a) / z1 + norm_cdf(0.5 * a - l / a) / z2;
}

ExponentDerivs exponent_V_derivs(double gamma, double z1, double z2) {
  check_args(gamma, z1, z2);
  ExponentDerivs d;
  if (std::isinf(gamma)) {
    d.v = 1.0 / z1 + 1.0 / z2;
    d.v1 = -1.0 / (z1 * z1);
    d.v2 = -1.0 / (z2 * z2);
    return d;
  }
  if (gamma == 0.0) {
    d.v = 1.0 / std::min(z1, z2);
    (z1 <= z2 ? d.v1 : d.v2) = -d.v * d.v;
    return d;
  }
  const double a = std::sqrt(2.0 * gamma);
  const double l = std::log(z2 / z1);
  const double w = 0.5 * a + l / a, v = 0.5 * a - l / a;
  const double cw = norm_cdf(w), cv = norm_cdf(v), pw = norm_pdf(w), pv = norm_pdf(v);
  d.v = cw / z1 + cv / z2;
  d.v1 = -cw / (z1 * z1) - pw / (a * z1 * z1) + pv / (a * z1 * z2);
  d.v2 = -cv / (z2 * z2) - pv / (a * z2 * z2) + pw / (a * z1 * z2);
  d.v12 = -(z2 * v * pw + z1 * w * pv) / (a * a * z1 * z1 * z2 * z2);
  return d;
}

double pair_loglik(double gamma, double z1, double z2) {
  const ExponentDerivs d = exponent_V_derivs(gamma, z1, z2);
  return std::log(std::max(d.v1 * d.v2 - d.v12, kDensityFloor)) - d.v;
}

double extremal_coefficient(double gamma) {
  if (!(gamma >= 0.0)) throw DomainError("semivariogram value must be nonnegative");
  // 2 - chi: the rounding error of the difference is below half an ulp of 2,
  // so extremal_coefficient(g) + cep_chi(g) == 2 holds exactly.
  return 2.0 - cep_chi(gamma);
}

double cep_chi(double gamma) {
  if (!(gamma >= 0.0)) throw DomainError("semivariogram value must be nonnegative");
  return std::erfc(std::sqrt(0.5 * gamma) / std::numbers::sqrt2);
}

ad::Var pair_loglik(const ad::Var& gamma, const Eigen::VectorXd& z1, const Eigen::VectorXd& z2, int* floored) {
  ad::Tape& t = *gamma.tape();
  const Index k = gamma.rows();
  if (gamma.cols() != 1 || z1.size() != k || z2.size() != k) throw std::invalid_argument("pair_loglik: shape mismatch");
  if ((z1.array() <= 0.0).any() || (z2.array() <= 0.0).any()) throw DomainError("pair_loglik needs positive data");
  const auto c = [&t](const Eigen::ArrayXd& v) { return t.constant(Eigen::MatrixXd(v.matrix())); };
  const Eigen::ArrayXd i1 = z1.array().inverse(), i2 = z2.array().inverse();

  const ad::Var a = ad::sqrt(2.0 * gamma);
  const ad::Var l = c((z2.array() / z1.array()).log());
  const ad::Var la = l / a;
  const ad::Var w = 0.5 * a + la, v = 0.5 * a - la;
  const ad::Var cw = ad::normal_cdf(w), cv = ad::normal_cdf(v);
  const ad::Var pw = kInvSqrt2Pi * ad::exp(-0.5 * ad::square(w));
  const ad::Var pv = kInvSqrt2Pi * ad::exp(-0.5 * ad::square(v));
  const ad::Var i11 = c(i1 * i1), i22 = c(i2 * i2), i12 = c(i1 * i2);
  const ad::Var vv = cw * c(i1) + cv * c(i2);
  const ad::Var v1 = -(cw * i11) - (pw / a) * i11 + (pv / a) * i12;
  const ad::Var v2 = -(cv * i22) - (pv / a) * i22 + (pw / a) * i12;
  const ad::Var v12 = -((v * pw) * c(i1 * i1 * i2) + (w * pv) * c(i1 * i2 * i2)) / ad::square(a);
  ad::Var dens = v1 * v2 - v12;

  const Eigen::ArrayXd dv = dens.value().array();
  const Eigen::ArrayXd keep = (dv > kDensityFloor).cast<double>();
  const int bad = static_cast<int>(k - static_cast<Index>(keep.sum()));
  if (floored != nullptr) *floored = bad;
  if (bad > 0) dens = dens * c(keep) + c((1.0 - keep) * kDensityFloor);
  return ad::log(dens) - vv;
}

ad::Var extremal_coefficient(const ad::Var& gamma) { return 2.0 * ad::normal_cdf(ad::sqrt(0.5 * gamma)); }

}  // namespace deepwarp::extremes
