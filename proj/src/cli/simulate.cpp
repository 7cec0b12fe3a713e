#include "deepwarp/cli/pipeline.hpp"

#include "deepwarp/error.hpp"
#include "deepwarp/util/rng.hpp"

#include <json.hpp>

#include <cmath>

namespace deepwarp::cli {

namespace {

using ojson = nlohmann::ordered_json;
using io::format_double;

// The fixed deformation behind AWU_RBF_2D: a steep axial stretch around x = 0,
// a milder one around y = 0.25, and a radial bump at the origin.
struct TruthWarp {
  warp::WarpStack stack;
  std::vector<warp::UnitWeights> weights;
};

TruthWarp truth_warp() {
  TruthWarp t;
  t.stack = warp::WarpStack(
      2, {warp::AxialWarpUnit(1, 5, 20.0), warp::AxialWarpUnit(2, 5, 20.0), warp::RbfBlockUnit(1)}, true);
  Eigen::VectorXd s1(4), s2(4), rbf = Eigen::VectorXd::Zero(9);
  s1 << 0.0, 1.5, 0.0, 0.0;  // centers -0.25, 0, 0.25, 0.5
  s2 << 0.0, 0.0, 0.8, 0.0;
  rbf(4) = 0.25;  // center (0, 0)
  t.weights = {{{Eigen::VectorXd::Constant(1, 0.3), s1}}, {{Eigen::VectorXd::Constant(1, 1.0), s2}}, {{rbf}}};
  return t;
}

Eigen::MatrixXd grid(double ds, int side) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(side) * side, 2);
  Eigen::Index k = 0;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      g(k, 0) = -0.5 + ds * i;
      g(k, 1) = -0.5 + ds * j;
      ++k;
    }
  }
  return g;
}

Eigen::MatrixXd sample_rows(const Eigen::MatrixXd& all, int n, util::Rng& rng) {
  if (n > all.rows()) {
    throw ConfigError("simulate: n = " + std::to_string(n) + " exceeds the " + std::to_string(all.rows()) +
                      "-point grid");
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(all.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  rng.shuffle(idx);
  Eigen::MatrixXd out(n, 2);
  for (int i = 0; i < n; ++i) out.row(i) = all.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

Eigen::MatrixXd distances(const Eigen::MatrixXd& s) {
  const Eigen::Index n = s.rows();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = 0; j < i; ++j) d(i, j) = d(j, i) = (s.row(i) - s.row(j)).norm();
  }
  return d;
}

Eigen::VectorXd gaussian_field(const Eigen::MatrixXd& latent, const covario::CovParams& cov, double sigma2y,
                               util::Rng& rng) {
  const Eigen::Index n = latent.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) k(i, j) = covario::cov_iso(cov, (latent.row(i) - latent.row(j)).norm());
  }
  // In place: only the lower triangle is read and overwritten by the factor.
  Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(k);
  if (llt.info() != Eigen::Success) throw CholeskyError("simulate: field covariance is not positive definite");
  Eigen::VectorXd e(n), noise(n);
  for (Eigen::Index i = 0; i < n; ++i) e(i) = rng.normal();
  for (Eigen::Index i = 0; i < n; ++i) noise(i) = rng.normal();
  return llt.matrixL() * e + std::sqrt(sigma2y) * noise;
}

ojson layers_truth(const TruthWarp& t) {
  ojson layers = ojson::array();
  for (std::size_t k = 0; k < t.stack.size(); ++k) {
    ojson l;
    const auto& u = t.stack.units()[k];
    if (const auto* a = std::get_if<warp::AxialWarpUnit>(&u)) {
      l = {{"type", "AWU"}, {"dim", a->dim()}, {"r", a->basis_count()}, {"steepness", a->steepness()},
           {"lims", {a->lims().lo, a->lims().hi}}};
    } else if (const auto* r = std::get_if<warp::RbfBlockUnit>(&u)) {
      l = {{"type", "RBF"}, {"res", r->res()}};
    }
    ojson parts = ojson::array();
    for (const auto& p : t.weights[k].parts) parts.push_back(std::vector<double>(p.data(), p.data() + p.size()));
    l["weights"] = parts;
    layers.push_back(l);
  }
  return layers;
}

}  // namespace

SimulatedData simulate(const RunConfig& config) {
  const SimulateSpec& s = config.simulate;
  util::Rng rng(config.seed.value_or(1));
  const int side = static_cast<int>(std::floor(1.0 / s.ds + 1e-9)) + 1;
  const Eigen::MatrixXd sites = sample_rows(grid(s.ds, side), s.n, rng);

  ojson truth;
  truth["type"] = s.type;
  truth["seed"] = config.seed.value_or(1);
  truth["config_hash"] = config_hash(config);
  truth["grid"] = {{"ds", s.ds}, {"side", side}};
  truth["n"] = s.n;

  SimulatedData out;
  out.csv = provenance_line(config);
  if (s.type == "BR_approx") {
    const covario::VarioParams vario{s.range, s.smoothness};
    const Eigen::MatrixXd gamma = distances(sites).unaryExpr([&](double h) { return covario::vario_power(vario, h); });
    Eigen::MatrixXd obs;
    if (s.pareto) {
      const extremes::Risk risk = extremes::parse_risk(config.risk, config.risk_site);
      obs = extremes::r_pareto_simulate(gamma, s.n_fields, risk, rng);
      truth["risk"] = extremes::risk_name(risk);
    } else {
      obs = extremes::br_simulate_approx(gamma, s.n_fields, s.n_spectral, rng);
      truth["n_spectral"] = s.n_spectral;
    }
    truth["pareto"] = s.pareto;
    truth["n_fields"] = s.n_fields;
    truth["vario"] = {{"range", s.range}, {"smoothness", s.smoothness}};
    std::vector<std::string> head = {"x", "y"};
    for (int t = 1; t <= s.n_fields; ++t) head.push_back("z" + std::to_string(t));
    out.csv += io::csv_row(head);
    for (Eigen::Index i = 0; i < sites.rows(); ++i) {
      std::vector<std::string> row = {format_double(sites(i, 0)), format_double(sites(i, 1))};
      for (Eigen::Index t = 0; t < obs.rows(); ++t) row.push_back(format_double(obs(t, i)));
      out.csv += io::csv_row(row);
    }
  } else {
    const covario::CovParams cov{s.variance, s.lengthscale, covario::parse_family(s.family)};
    Eigen::MatrixXd latent = sites;
    if (s.type == "AWU_RBF_2D") {
      const TruthWarp tw = truth_warp();
      // Renormalization ranges come from the full grid, so the map does not
      // depend on which sites were sampled.
      warp::Calibration cal;
      tw.stack.forward(grid(s.ds, side), tw.weights, nullptr, &cal);
      latent = tw.stack.forward(sites, tw.weights, &cal);
      truth["warp"] = layers_truth(tw);
      ojson c = ojson::array();
      for (const auto& u : cal.units) {
        ojson r = ojson::array();
        for (const auto& a : u) r.push_back({a.lo, a.hi});
        c.push_back(r);
      }
      truth["calibration"] = c;
    }
    truth["cov"] = {{"family", s.family}, {"variance", s.variance}, {"lengthscale", s.lengthscale}};
    truth["sigma2y"] = s.sigma2y;
    const Eigen::VectorXd z = gaussian_field(latent, cov, s.sigma2y, rng);
    out.csv += io::csv_row({"x", "y", "z"});
    for (Eigen::Index i = 0; i < sites.rows(); ++i) {
      out.csv += io::csv_row({format_double(sites(i, 0)), format_double(sites(i, 1)), format_double(z(i))});
    }
  }
  out.truth = truth.dump(1) + "\n";
  return out;
}

}  // namespace deepwarp::cli
