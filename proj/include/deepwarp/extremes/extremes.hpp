#pragma once

// Brown-Resnick max-stable and r-Pareto machinery: bivariate exponent
// function and densities, dependence summaries, empirical estimators, the
// WLS / PCL / RPL / GSM objectives and simulators.
//
// Variograms here are semivariograms gamma(h) = (h / range)^smoothness; the
// Brown-Resnick variogram of the log-Gaussian spectral field is 2 gamma.

#include "deepwarp/ad/tape.hpp"
#include "deepwarp/covario/covario.hpp"
#include "deepwarp/engine/params.hpp"
#include "deepwarp/util/rng.hpp"
#include "deepwarp/warp/warp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace deepwarp::extremes {

using Index = Eigen::Index;

// ---- margins ----

// Per-site rank transforms (average ranks for ties). Throws DataError on a
// constant column; appends a warning when T < 20.
Eigen::MatrixXd frechet_standardize(const Eigen::MatrixXd& raw, std::vector<std::string>* warnings = nullptr);
Eigen::MatrixXd pareto_standardize(const Eigen::MatrixXd& raw, std::vector<std::string>* warnings = nullptr);

// ---- bivariate Brown-Resnick ----

struct ExponentDerivs {
  double v = 0.0, v1 = 0.0, v2 = 0.0, v12 = 0.0;
};

double exponent_V(double gamma, double z1, double z2);
ExponentDerivs exponent_V_derivs(double gamma, double z1, double z2);
// log{V1 V2 - V12} - V; the density argument is floored at 1e-300.
double pair_loglik(double gamma, double z1, double z2);

double extremal_coefficient(double gamma);  // 2 Phi(sqrt(gamma / 2)), computed as 2 - cep_chi(gamma)
double cep_chi(double gamma);               // 2 - 2 Phi(sqrt(gamma / 2)) = erfc(sqrt(gamma) / 2)

// Elementwise tape forms over a column of terms. Entries whose density
// argument is not positive are floored at 1e-300 (zero gradient) and counted.
ad::Var pair_loglik(const ad::Var& gamma, const Eigen::VectorXd& z1, const Eigen::VectorXd& z2,
                    int* floored = nullptr);
ad::Var extremal_coefficient(const ad::Var& gamma);

// ---- risk functionals ----

enum class RiskKind { max, sum, site };

struct Risk {
  RiskKind kind = RiskKind::sum;
  Index site = 0;
};

Risk parse_risk(std::string_view name, Index site = 0);
std::string risk_name(const Risk& risk);

double risk_eval(const Risk& risk, const Eigen::VectorXd& x);
// dr/dx_i; for max the first attaining coordinate gets 1.
Eigen::VectorXd risk_grad(const Risk& risk, const Eigen::VectorXd& x);

// ---- empirical dependence ----

// F-madogram extremal coefficient, clamped to [1, 2].
double empirical_ec(const Eigen::MatrixXd& maxima, Index i, Index j);

// Events retained by r(x_t / u) >= 1.
std::vector<bool> retained_events(const Eigen::MatrixXd& x, const Risk& risk, double u);

// Conditional exceedance probability at level u2 among retained events; empty
// when no retained event has x_i >= u2.
std::optional<double> empirical_cep(const Eigen::MatrixXd& x, const std::vector<bool>& retained, Index i, Index j,
                                    double u2);

// Empirical quantile (type 7) of r(x_t) over the rows of x.
double risk_threshold(const Eigen::MatrixXd& x, const Risk& risk, double quantile);

// ---- Brown-Resnick intensity ----

struct IntensityValue {
  double log_lambda = 0.0;
  Eigen::VectorXd grad;       // d log(lambda) / dz_i
  Eigen::VectorXd hess_diag;  // d^2 log(lambda) / dz_i^2
};

// Anchored log-intensity for a semivariogram matrix `gamma` (n x n).
IntensityValue br_log_intensity(const Eigen::MatrixXd& gamma, const Eigen::VectorXd& z, Index anchor = 0);

struct GsmWeight {
  Eigen::VectorXd w;
  Eigen::VectorXd dw;  // dw_i / dz_i
};

// w_i(z) = z_i (1 - exp(1 - r(z))).
GsmWeight gsm_weight(const Risk& risk, const Eigen::VectorXd& z);

// Weighted Hyvarinen score summed over events (rows of `events`, already
// divided by the threshold), anchored at site 0.
double gsm_score(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& events, const Risk& risk);
ad::Var gsm_score(const ad::Var& gamma, const Eigen::MatrixXd& events, const Risk& risk);

// ---- simulation ----

// Semivariogram matrix of sites under a warp (renormalization fitted on `coords`).
Eigen::MatrixXd semivariogram_matrix(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& weights,
                                     const covario::VarioParams& params, const Eigen::MatrixXd& coords,
                                     const warp::Calibration* calibration = nullptr);

// Max-stable fields with unit Frechet margins (T x n) by the spectral
// representation with Dieker-Mikosch normalized spectral functions, stopping
// once no further term can change the maxima or after n_spectral terms.
Eigen::MatrixXd br_simulate_approx(const Eigen::MatrixXd& gamma, int n_fields, int n_spectral, util::Rng& rng);

// r-Pareto events (T x n) with r(x) >= 1, unit Pareto scale.
Eigen::MatrixXd r_pareto_simulate(const Eigen::MatrixXd& gamma, int n_events, const Risk& risk, util::Rng& rng);

// ---- model ----

enum class Method { wls, pcl, rpl, gsm };

Method parse_method(std::string_view name);
std::string method_name(Method method);

struct ExtremesSpec {
  warp::WarpStack stack;  // empty = stationary
  Method method = Method::wls;
  bool pareto = false;    // r-Pareto data (WLS on CEP, GSM) instead of block maxima
  Risk risk;
  double risk_quantile = 0.95;
  double pcl_b = 1.0;     // pair retention probability
  double rpl_b = 1.0;     // per-replicate pair retention probability
  std::uint64_t seed = 1;
};

// Sites (rescaled coordinates) and replicates on the standardized scale:
// unit Frechet maxima, or unit Pareto observations.
struct ExtremesData {
  Eigen::MatrixXd coords;  // n x 2
  Eigen::MatrixXd obs;     // T x n

  Index sites() const { return coords.rows(); }
  Index replicates() const { return obs.rows(); }
};

struct PairList {
  std::vector<Index> i, j;
  Index size() const { return static_cast<Index>(i.size()); }
};

// Everything drawn or estimated once before optimization.
struct ExtremesStructures {
  PairList pairs;
  Eigen::VectorXd target;   // WLS: empirical coefficient per pair
  Eigen::VectorXd weights;  // WLS weights per pair
  std::vector<Index> term_pair;  // PCL / RPL: retained (replicate, pair) terms
  Eigen::VectorXd z1, z2;
  int replicates = 0;
  Eigen::MatrixXd events;   // GSM: retained events divided by the threshold
  double threshold = 1.0;
  int excluded_pairs = 0;
};

struct ExtremesRates {
  warp::WarpRates warp;
  double vario = 0.05;
};

class ExtremesModel {
 public:
  explicit ExtremesModel(ExtremesSpec spec);

  const ExtremesSpec& spec() const { return spec_; }
  void check(const ExtremesData& data) const;

  void register_params(engine::ParamVector& params, const ExtremesRates& rates) const;
  ExtremesStructures build_structures(const ExtremesData& data) const;

  ad::Var loss(ad::Tape& tape, const engine::Binding& params, const ExtremesData& data,
               const ExtremesStructures& structures, warp::Calibration* record = nullptr) const;
  engine::LossFn objective(const ExtremesData& data, const ExtremesStructures& structures) const;

 private:
  ExtremesSpec spec_;
};

struct ExtremesFit {
  ExtremesSpec spec;
  std::vector<warp::UnitWeights> weights;
  warp::Calibration calibration;
  covario::VarioParams vario;
};

ExtremesFit finalize(const ExtremesModel& model, const engine::ParamVector& params, const ExtremesData& data,
                     const ExtremesStructures& structures);

// Warped coordinates and pairwise semivariogram under a fit (frozen calibration).
Eigen::MatrixXd warped_sites(const ExtremesFit& fit, const Eigen::MatrixXd& coords);
double fitted_semivariogram(const ExtremesFit& fit, const Eigen::Vector2d& s1, const Eigen::Vector2d& s2);

}  // namespace deepwarp::extremes
