#pragma once

// Gaussian likelihood backends (exact REML, nearest-neighbour Vecchia,
// fixed-rank bisquare basis), generalized least squares and kriging.

#include "deepwarp/ad/tape.hpp"
#include "deepwarp/covario/covario.hpp"
#include "deepwarp/engine/params.hpp"
#include "deepwarp/warp/warp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace deepwarp::gauss {

using Index = Eigen::Index;

// ---- generalized least squares ----

struct GlsResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd beta_cov;  // (X' Sigma^-1 X)^-1
};

// beta = (X' S^-1 X)^-1 X' S^-1 z for a dense covariance S.
GlsResult gls_beta(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& x, const Eigen::VectorXd& z);

// ---- exact restricted likelihood ----

// Restricted log-likelihood
//   -((n-q)/2) log 2pi + 1/2 log|X'X| - 1/2 log|S| - 1/2 log|X'S^-1X| - 1/2 z' Pi z,
//   Pi = S^-1 - S^-1 X (X'S^-1X)^-1 X' S^-1,
// as one tape node with adjoint dS = 1/2 (Pi z z' Pi - Pi). On Cholesky failure
// 1e-8 * jitter_scale is added to the diagonal once before giving up.
ad::Var reml_loglik(const ad::Var& sigma, const Eigen::MatrixXd& x, const Eigen::VectorXd& z, double jitter_scale,
                    GlsResult* gls = nullptr);

// ---- nearest-neighbour (Vecchia) approximation ----

struct NngpStructure {
  std::vector<Index> order;                   // visiting order (row indices)
  std::vector<std::vector<Index>> neighbors;  // neighbors[k]: rows preceding order[k]
};

// Random order from `seed`, then the min(m, k) nearest preceding points.
NngpStructure build_nngp(std::uint64_t seed, const Eigen::MatrixXd& coords, int m);
NngpStructure build_nngp_ordered(const std::vector<Index>& order, const Eigen::MatrixXd& coords, int m);

// Covariance of Z over `rows` with `jitter` added to the diagonal.
using BlockFn = std::function<ad::Var(const std::vector<Index>& rows, double jitter)>;

// Vecchia log-likelihood with the trend profiled out: each conditional term is
// whitened into a row of (u, V) and beta = (V'V)^-1 V'u.
ad::Var nngp_loglik(const BlockFn& block, const NngpStructure& structure, const Eigen::MatrixXd& x,
                    const Eigen::VectorXd& z, double jitter_scale, GlsResult* gls = nullptr);

// ---- fixed-rank basis model ----

double bisquare_eval(const Eigen::Vector2d& center, double aperture, const Eigen::Vector2d& w);

struct FrkLayout {
  int side = 0;             // side x side grid; 0 = no basis
  Eigen::MatrixXd centers;  // side^2 x 2, warped space
  double aperture = 0.0;
};

// side = sqrt(basis); basis must be a perfect square, capped so side^2 <= n/2.
int frk_side(int basis, Index n);

Eigen::MatrixXd bisquare_basis(const Eigen::MatrixXd& warped, const FrkLayout& layout);

// Log-likelihood of Z with S = Phi Sigma_eta Phi' + noise I through the Woodbury
// identity, trend profiled out. The grid spans the bounding box of `warped`;
// Sigma_eta = tau2 exp(-D / ell) on the centers.
ad::Var frk_loglik(const ad::Var& warped, int side, const ad::Var& tau2, const ad::Var& ell, const ad::Var& noise,
                   const Eigen::MatrixXd& x, const Eigen::VectorXd& z, FrkLayout* layout = nullptr,
                   GlsResult* gls = nullptr);

// ---- model ----

enum class Backend { exact, nngp, frk };
enum class ModelKind { spatial, spatio_temporal, bivariate };

Backend parse_backend(std::string_view name);
std::string backend_name(Backend backend);

struct GaussSpec {
  ModelKind kind = ModelKind::spatial;
  Backend backend = Backend::exact;
  covario::CovFamily family = covario::CovFamily::exponential;
  warp::WarpStack spatial;   // empty stack = stationary
  warp::WarpStack temporal;  // spatio-temporal only
  warp::WarpStack spatial2;  // bivariate: warp of the second process
  int neighbors = 50;
  int basis = 400;
  std::uint64_t order_seed = 1;
};

// Long-format observations. Coordinates and times are already rescaled.
struct GaussData {
  Eigen::MatrixXd coords;   // n x 2
  Eigen::VectorXd times;    // n, spatio-temporal only
  Eigen::VectorXi process;  // n in {0, 1}, bivariate only
  Eigen::MatrixXd x;        // n x q base design
  Eigen::VectorXd z;        // n

  Index size() const { return coords.rows(); }
};

struct GaussRates {
  warp::WarpRates warp;
  double cov = 0.05;
};

struct GaussStructures {
  NngpStructure nngp;
  int frk_side = 0;
};

// Quantities fixed by one pass over the data at the current parameters.
struct FitRecord {
  warp::Calibration spatial, temporal, spatial2;
  FrkLayout frk;
  GlsResult gls;
};

class GaussModel {
 public:
  explicit GaussModel(GaussSpec spec);

  const GaussSpec& spec() const { return spec_; }

  // Validates the data against the model kind and backend.
  void check(const GaussData& data) const;
  // Trend design: the base design, block-expanded per process when bivariate.
  Eigen::MatrixXd design(const GaussData& data) const;

  void register_params(engine::ParamVector& params, const GaussData& data, const GaussRates& rates) const;
  GaussStructures build_structures(const GaussData& data) const;

  ad::Var loglik(ad::Tape& tape, const engine::Binding& params, const GaussData& data,
                 const GaussStructures& structures, FitRecord* record = nullptr) const;
  // Negative log-likelihood; `data` and `structures` must outlive the function.
  engine::LossFn objective(const GaussData& data, const GaussStructures& structures) const;

 private:
  GaussSpec spec_;
};

struct GaussFit {
  GaussSpec spec;
  std::vector<warp::UnitWeights> w_spatial, w_temporal, w_spatial2;
  double variance = 1.0, variance2 = 1.0;
  double lengthscale = 1.0, t_lengthscale = 1.0;
  double noise = 0.1, noise2 = 0.1;
  double rho = 0.0;
  GaussStructures structures;
  FitRecord record;
};

GaussFit finalize(const GaussModel& model, const engine::ParamVector& params, const GaussData& data,
                  const GaussStructures& structures);

struct PredictOptions {
  bool latent = false;  // stderr of the latent field instead of the noisy response
  int neighbors = 50;   // nngp backend: training points per site
};

struct PredictionResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd stderr_;
  std::vector<bool> extrapolated;
};

// Universal kriging at `sites` (coords/times/process/x; z ignored) given the
// training data the fit was computed on.
PredictionResult predict(const GaussFit& fit, const GaussData& train, const GaussData& sites,
                         const PredictOptions& options = {});

// Covariance of Z between two row sets under the fitted parameters; noise is
// added where `add_noise` and the rows coincide by index (a and b identical).
Eigen::MatrixXd fitted_cov(const GaussFit& fit, const GaussData& a, const GaussData& b, bool add_noise);

// ---- scoring ----

double crps_gaussian(double mean, double sd, double truth);

struct Scores {
  double rmspe = 0.0;
  double crps = 0.0;
};

Scores score_predictions(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd, const Eigen::VectorXd& truth);

}  // namespace deepwarp::gauss
