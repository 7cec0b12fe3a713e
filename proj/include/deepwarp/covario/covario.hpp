#pragma once

// Stationary isotropic covariance and semivariogram families, and their
// nonstationary lifts through a warp stack.

#include "deepwarp/ad/tape.hpp"
#include "deepwarp/warp/warp.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>

namespace deepwarp::covario {

enum class CovFamily { exponential, matern32 };

CovFamily parse_family(std::string_view name);
std::string family_name(CovFamily family);

struct CovParams {
  double variance = 1.0;
  double lengthscale = 1.0;
  CovFamily family = CovFamily::exponential;
};

// Power semivariogram (h / range)^smoothness, smoothness in (0, 2].
struct VarioParams {
  double range = 1.0;
  double smoothness = 1.0;
};

// Bivariate model with a shared correlation function: C_12(h) = rho s1 s2 rho0(h).
struct CrossCovParams {
  CovParams first;
  CovParams second;
  double rho = 0.0;
};

// Separable space-time model; the product variance is first.variance * second.variance.
struct StParams {
  CovParams spatial;
  CovParams temporal;
};

// ---- scalar forms ----
double correlation_iso(CovFamily family, double lengthscale, double h);
double cov_iso(const CovParams& params, double h);
double vario_power(const VarioParams& params, double h);

// ---- tape forms (elementwise over a distance matrix) ----
ad::Var correlation(CovFamily family, const ad::Var& dist, const ad::Var& lengthscale);
ad::Var covariance(CovFamily family, const ad::Var& dist, const ad::Var& variance, const ad::Var& lengthscale);
ad::Var semivariogram(const ad::Var& dist, const ad::Var& range, const ad::Var& smoothness);

// ---- nonstationary lifts ----
// The calibration freezes the warp's renormalization; when null it is fitted
// on S1 and reused for S2.
Eigen::MatrixXd nonstat_cov_matrix(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& weights,
                                   const warp::Calibration* calibration, const CovParams& params,
                                   const Eigen::MatrixXd& s1, const Eigen::MatrixXd& s2);

double nonstat_vario(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& weights,
                     const warp::Calibration& calibration, const VarioParams& params, const Eigen::Vector2d& s1,
                     const Eigen::Vector2d& s2);

struct WarpedField {
  const warp::WarpStack* stack = nullptr;
  std::vector<warp::UnitWeights> weights;
  warp::Calibration calibration;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& coords) const;
};

double st_sep_cov(const WarpedField& spatial, const WarpedField& temporal, const StParams& params,
                  const Eigen::Vector2d& s1, double t1, const Eigen::Vector2d& s2, double t2);

// p1, p2 in {1, 2}.
double cross_cov(const WarpedField& f1, const WarpedField& f2, const CrossCovParams& params, int p1, int p2,
                 const Eigen::Vector2d& s1, const Eigen::Vector2d& s2);

// Throws ConfigError unless both processes share family and lengthscale and |rho| <= 1.
void validate_cross(const CrossCovParams& params);

}  // namespace deepwarp::covario
