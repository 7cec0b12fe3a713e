#pragma once

// Run configuration: a JSON document validated against a fixed schema before
// any computation. Unknown keys and wrongly typed values are ConfigErrors.

#include "deepwarp/engine/optim.hpp"
#include "deepwarp/warp/warp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace deepwarp::cli {

struct LayerSpec {
  std::string type;  // AWU, RBF or LFT
  int dim = 1;
  int r = 50;
  double steepness = 200.0;
  warp::AxisRange lims;
  int res = 1;
};

struct OptimizerSpec {
  engine::OptimizerKind method = engine::OptimizerKind::adam;
  int nsteps = 50;
  int nsteps_pre = 0;
  double tolerance = 0.0;
  int log_every = 0;
  double rate_warp = 0.02;
  double rate_mobius = 0.01;
  double rate_cov = 0.05;
  double rate_vario = 0.05;
};

struct SimulateSpec {
  std::string type = "AWU_RBF_2D";  // AWU_RBF_2D, stationary_GP, BR_approx
  int n = 1000;
  double ds = 0.01;
  double sigma2y = 0.01;
  std::string family = "exponential";
  double variance = 1.0;
  double lengthscale = 0.2;
  // BR_approx
  int n_fields = 100;
  int n_spectral = 1000;
  double range = 0.5;
  double smoothness = 1.0;
  bool pareto = false;
};

struct RunConfig {
  std::string model = "gp";  // gp or extremes
  // Gaussian
  std::string kind = "spatial";  // spatial, spatio_temporal, bivariate
  std::string backend = "exact";
  std::string family = "exponential";
  int neighbors = 50;
  int predict_neighbors = 50;
  int basis = 400;
  std::vector<std::string> covariates;
  std::string response = "z";
  bool latent = false;
  // warps
  std::vector<LayerSpec> layers, temporal_layers, layers2;
  bool renormalize = true;
  // extremes
  std::string method = "wls";
  std::string data_type = "maxima";  // maxima or pareto
  bool standardize = true;
  std::string risk = "sum";
  int risk_site = 0;
  std::optional<double> risk_quantile;
  double pcl_b = 1.0;
  double rpl_b = 1.0;
  // summary
  std::vector<std::vector<double>> reference_sites;
  int curve_points = 50;
  // shared
  OptimizerSpec optimizer;
  std::optional<std::uint64_t> seed;
  std::string trace;  // loss trace CSV; default <out>.trace.csv
  SimulateSpec simulate;
};

RunConfig parse_config(const std::string& json_text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

// Canonical JSON echo of a parsed configuration (all defaults filled in).
std::string config_json(const RunConfig& config);
// FNV-1a 64 of the canonical echo, as 16 hex digits.
std::string config_hash(const RunConfig& config);

warp::WarpStack build_stack(const std::vector<LayerSpec>& layers, int input_dim, bool renormalize);

}  // namespace deepwarp::cli
