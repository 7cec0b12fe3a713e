#include "deepwarp/cli/pipeline.hpp"

#include "deepwarp/error.hpp"

#include <json.hpp>

#include <cmath>

namespace deepwarp::cli {

namespace {

using io::format_double;

Eigen::MatrixXd raw_xy(const io::Table& table) {
  Eigen::MatrixXd out(table.rows(), 2);
  out.col(0) = table.col("x");
  out.col(1) = table.col("y");
  return out;
}

Eigen::MatrixXd reference_matrix(const RunConfig& config) {
  if (config.reference_sites.empty()) throw ConfigError("summary needs at least one entry in reference_sites");
  Eigen::MatrixXd refs(static_cast<Eigen::Index>(config.reference_sites.size()), 2);
  for (std::size_t k = 0; k < config.reference_sites.size(); ++k) {
    refs(static_cast<Eigen::Index>(k), 0) = config.reference_sites[k][0];
    refs(static_cast<Eigen::Index>(k), 1) = config.reference_sites[k][1];
  }
  return refs;
}

// Spatial-only view of a Gaussian fit: coordinates, time 0, first process.
gauss::GaussData spatial_sites(const GaussRun& run, const Eigen::MatrixXd& rescaled) {
  gauss::GaussData d;
  d.coords = rescaled;
  const Eigen::Index n = rescaled.rows();
  if (run.fit.spec.kind == gauss::ModelKind::spatio_temporal) d.times = Eigen::VectorXd::Zero(n);
  if (run.fit.spec.kind == gauss::ModelKind::bivariate) d.process = Eigen::VectorXi::Zero(n);
  d.x = Eigen::MatrixXd::Ones(n, run.train.x.cols());
  d.z = Eigen::VectorXd::Zero(n);
  return d;
}

Eigen::MatrixXd warp_of(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& w,
                        const warp::Calibration& c, const Eigen::MatrixXd& rescaled) {
  if (stack.empty()) return rescaled;
  return stack.forward(rescaled, w, &c);
}

std::string flag(bool b) { return b ? "1" : "0"; }

}  // namespace

std::string provenance_line(const RunConfig& config) {
  return "# deepwarp config_hash=" + config_hash(config) + " seed=" + std::to_string(config.seed.value_or(1)) + "\n";
}

std::string predict_csv(const ModelRun& model, const io::Table& newdata) {
  const auto* run = std::get_if<GaussRun>(&model);
  if (run == nullptr) {
    throw UnsupportedError("prediction is implemented for Gaussian-process models only; use 'summary' for extremes models");
  }
  const gauss::GaussData sites = gauss_data(newdata, run->config, run->space, run->time, false);
  gauss::PredictOptions opt;
  opt.latent = run->config.latent;
  opt.neighbors = run->config.predict_neighbors;
  const gauss::PredictionResult p = gauss::predict(run->fit, run->train, sites, opt);

  const bool st = run->fit.spec.kind == gauss::ModelKind::spatio_temporal;
  const bool biv = run->fit.spec.kind == gauss::ModelKind::bivariate;
  std::string out = provenance_line(run->config);
  std::vector<std::string> head = {"x", "y"};
  if (st) head.push_back("t");
  if (biv) head.push_back("process");
  for (const char* h : {"mean", "stderr", "extrapolated"}) head.emplace_back(h);
  out += io::csv_row(head);
  const Eigen::VectorXd x = newdata.col("x"), y = newdata.col("y");
  for (Eigen::Index i = 0; i < newdata.rows(); ++i) {
    std::vector<std::string> row = {format_double(x(i)), format_double(y(i))};
    if (st) row.push_back(format_double(newdata.col("t")(i)));
    if (biv) row.push_back(std::to_string(sites.process(i) + 1));
    row.push_back(format_double(p.mean(i)));
    row.push_back(format_double(p.stderr_(i)));
    row.push_back(flag(p.extrapolated[static_cast<std::size_t>(i)]));
    out += io::csv_row(row);
  }
  return out;
}

SummaryFiles summary_files(const ModelRun& model, const io::Table& newdata, const RunConfig& config) {
  const Eigen::MatrixXd refs_raw = reference_matrix(config);
  const Eigen::MatrixXd sites_raw = raw_xy(newdata);
  const RunConfig& mc = std::visit([](const auto& r) -> const RunConfig& { return r.config; }, model);
  const warp::Rescaler& space = std::visit([](const auto& r) -> const warp::Rescaler& { return r.space; }, model);
  const Eigen::MatrixXd refs = space.apply(refs_raw), sites = space.apply(sites_raw);
  const std::vector<bool> ref_out = space.outside(refs_raw), site_out = space.outside(sites_raw);

  Eigen::MatrixXd wrefs, wsites, value;  // value: refs x sites
  std::string measure;
  std::function<double(double)> curve;
  if (const auto* g = std::get_if<GaussRun>(&model)) {
    const gauss::GaussFit& f = g->fit;
    measure = "correlation";
    wrefs = warp_of(f.spec.spatial, f.w_spatial, f.record.spatial, refs);
    wsites = warp_of(f.spec.spatial, f.w_spatial, f.record.spatial, sites);
    const gauss::GaussData a = spatial_sites(*g, refs), b = spatial_sites(*g, sites);
    const Eigen::MatrixXd cab = gauss::fitted_cov(f, a, b, false);
    Eigen::VectorXd va(a.size()), vb(b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      va(i) = gauss::fitted_cov(f, spatial_sites(*g, refs.row(i)), spatial_sites(*g, refs.row(i)), false)(0, 0);
    }
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      vb(j) = gauss::fitted_cov(f, spatial_sites(*g, sites.row(j)), spatial_sites(*g, sites.row(j)), false)(0, 0);
    }
    value = (va.cwiseSqrt().cwiseInverse().asDiagonal() * cab) * vb.cwiseSqrt().cwiseInverse().asDiagonal();
    curve = [family = f.spec.family, ell = f.lengthscale](double h) { return covario::correlation_iso(family, ell, h); };
  } else {
    const auto& e = std::get<ExtremesRun>(model);
    const bool pareto = e.fit.spec.pareto;
    measure = pareto ? "chi" : "theta";
    wrefs = extremes::warped_sites(e.fit, refs);
    wsites = extremes::warped_sites(e.fit, sites);
    value.resize(refs.rows(), sites.rows());
    for (Eigen::Index i = 0; i < refs.rows(); ++i) {
      for (Eigen::Index j = 0; j < sites.rows(); ++j) {
        const double gam = covario::vario_power(e.fit.vario, (wrefs.row(i) - wsites.row(j)).norm());
        value(i, j) = pareto ? extremes::cep_chi(gam) : extremes::extremal_coefficient(gam);
      }
    }
    curve = [vario = e.fit.vario, pareto](double h) {
      const double gam = covario::vario_power(vario, h);
      return pareto ? extremes::cep_chi(gam) : extremes::extremal_coefficient(gam);
    };
  }

  SummaryFiles out;
  const std::string prov = provenance_line(mc);
  out.map = prov + io::csv_row({"ref", "ref_x", "ref_y", "x", "y", "warped_x", "warped_y", "distance", measure, "ref_outside"});
  double dmax = 0.0;
  for (Eigen::Index i = 0; i < refs.rows(); ++i) {
    for (Eigen::Index j = 0; j < sites.rows(); ++j) {
      const double d = (wrefs.row(i) - wsites.row(j)).norm();
      dmax = std::max(dmax, d);
      out.map += io::csv_row({std::to_string(i + 1), format_double(refs_raw(i, 0)), format_double(refs_raw(i, 1)),
                              format_double(sites_raw(j, 0)), format_double(sites_raw(j, 1)),
                              format_double(wsites(j, 0)), format_double(wsites(j, 1)), format_double(d),
                              format_double(value(i, j)), flag(ref_out[static_cast<std::size_t>(i)])});
    }
  }
  if (!(dmax > 0.0)) dmax = std::sqrt(2.0);
  out.curve = prov + io::csv_row({"distance", measure});
  for (int k = 0; k < config.curve_points; ++k) {
    const double h = dmax * static_cast<double>(k) / static_cast<double>(config.curve_points - 1);
    out.curve += io::csv_row({format_double(h), format_double(curve(h))});
  }
  out.sites = prov + io::csv_row({"x", "y", "warped_x", "warped_y", "outside"});
  for (Eigen::Index j = 0; j < sites.rows(); ++j) {
    out.sites += io::csv_row({format_double(sites_raw(j, 0)), format_double(sites_raw(j, 1)), format_double(wsites(j, 0)),
                              format_double(wsites(j, 1)), flag(site_out[static_cast<std::size_t>(j)])});
  }
  return out;
}

gauss::Scores score_tables(const io::Table& pred, const io::Table& truth, const std::string& response) {
  if (pred.rows() != truth.rows()) {
    throw DataError("prediction and truth files have different row counts (" + std::to_string(pred.rows()) + " vs " +
                    std::to_string(truth.rows()) + ")");
  }
  if (pred.rows() == 0) throw DataError("nothing to score");
  for (const char* c : {"x", "y"}) {
    if (pred.find(c) && truth.find(c) && pred.col(c) != truth.col(c)) {
      throw DataError(std::string("prediction and truth rows are not aligned (column '") + c + "' differs)");
    }
  }
  return gauss::score_predictions(pred.col("mean"), pred.col("stderr"), truth.col(response));
}

std::string score_json(const gauss::Scores& scores, std::size_t rows, const RunConfig& config) {
  nlohmann::ordered_json j;
  j["rmspe"] = scores.rmspe;
  j["crps"] = scores.crps;
  j["rows"] = rows;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed.value_or(1);
  return j.dump(1) + "\n";
}

}  // namespace deepwarp::cli
