#include "deepwarp/cli/pipeline.hpp"

#include "deepwarp/error.hpp"

#include <cstdio>
#include <sstream>

namespace deepwarp::cli {

namespace {

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

gauss::ModelKind parse_kind(const std::string& kind) {
  if (kind == "spatial") return gauss::ModelKind::spatial;
  if (kind == "spatio_temporal") return gauss::ModelKind::spatio_temporal;
  if (kind == "bivariate") return gauss::ModelKind::bivariate;
  throw ConfigError("unknown model kind '" + kind + "'");
}

Eigen::MatrixXd xy(const io::Table& table) {
  Eigen::MatrixXd out(table.rows(), 2);
  out.col(0) = table.col("x");
  out.col(1) = table.col("y");
  return out;
}

engine::FitConfig fit_config(const RunConfig& config) {
  engine::FitConfig fc;
  fc.nsteps = config.optimizer.nsteps;
  fc.nsteps_pre = config.optimizer.nsteps_pre;
  fc.optimizer = config.optimizer.method;
  fc.seed = config.seed.value_or(1);
  fc.tolerance = config.optimizer.tolerance;
  fc.log_every = config.optimizer.log_every;
  return fc;
}

warp::WarpRates warp_rates(const RunConfig& config) { return {config.optimizer.rate_warp, config.optimizer.rate_mobius}; }

}  // namespace

TraceDigest trace_digest(const engine::FitResult& result) {
  TraceDigest d;
  d.steps = static_cast<int>(result.trace.size());
  d.failures = result.failures;
  d.converged = result.converged;
  if (!result.trace.empty()) {
    d.first_loss = result.trace.front().loss;
    d.last_loss = result.trace.back().loss;
  }
  std::ostringstream csv;
  engine::write_trace_csv(csv, result);
  d.digest = fnv_hex(csv.str());
  return d;
}

void resolve(RunConfig& config, std::optional<std::uint64_t> seed_flag, std::optional<double> quantile_flag) {
  if (seed_flag) config.seed = *seed_flag;
  if (!config.seed) config.seed = 1;
  if (quantile_flag) config.risk_quantile = *quantile_flag;
  if (!config.risk_quantile) config.risk_quantile = 0.95;
}

gauss::GaussSpec gauss_spec(const RunConfig& config) {
  gauss::GaussSpec spec;
  spec.kind = parse_kind(config.kind);
  spec.backend = gauss::parse_backend(config.backend);
  spec.family = covario::parse_family(config.family);
  spec.spatial = build_stack(config.layers, 2, config.renormalize);
  spec.temporal = build_stack(config.temporal_layers, 1, config.renormalize);
  spec.spatial2 = build_stack(config.layers2, 2, config.renormalize);
  spec.neighbors = config.neighbors;
  spec.basis = config.basis;
  spec.order_seed = config.seed.value_or(1);
  return spec;
}

extremes::ExtremesSpec extremes_spec(const RunConfig& config) {
  if (!config.temporal_layers.empty() || !config.layers2.empty()) {
    throw ConfigError("extremes models take a single spatial warp ('layers')");
  }
  extremes::ExtremesSpec spec;
  spec.stack = build_stack(config.layers, 2, config.renormalize);
  spec.method = extremes::parse_method(config.method);
  spec.pareto = config.data_type == "pareto";
  if (config.risk_site < 0) throw ConfigError("risk_site must be >= 0");
  spec.risk = extremes::parse_risk(config.risk, config.risk_site);
  spec.risk_quantile = config.risk_quantile.value_or(0.95);
  spec.pcl_b = config.pcl_b;
  spec.rpl_b = config.rpl_b;
  spec.seed = config.seed.value_or(1);
  return spec;
}

gauss::GaussData gauss_data(const io::Table& table, const RunConfig& config, const warp::Rescaler& space,
                            const warp::Rescaler& time, bool need_response) {
  const Eigen::Index n = table.rows();
  if (n == 0) throw DataError("data has no rows");
  const gauss::ModelKind kind = parse_kind(config.kind);
  gauss::GaussData d;
  d.coords = space.apply(xy(table));
  if (kind == gauss::ModelKind::spatio_temporal) {
    Eigen::MatrixXd t = table.col("t");
    d.times = time.apply(t).col(0);
  }
  if (kind == gauss::ModelKind::bivariate) {
    const Eigen::VectorXd p = table.col("process");
    d.process.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (p(i) != 1.0 && p(i) != 2.0) throw DataError("process labels must be 1 or 2 (row " + std::to_string(i + 1) + ")");
      d.process(i) = p(i) == 1.0 ? 0 : 1;
    }
  }
  d.x.resize(n, 1 + static_cast<Eigen::Index>(config.covariates.size()));
  d.x.col(0).setOnes();
  for (std::size_t k = 0; k < config.covariates.size(); ++k) {
    d.x.col(static_cast<Eigen::Index>(k) + 1) = table.col(config.covariates[k]);
  }
  if (need_response || table.find(config.response)) {
    d.z = table.col(config.response);
  } else {
    d.z = Eigen::VectorXd::Zero(n);
  }
  return d;
}

extremes::ExtremesData extremes_data(const io::Table& table, const RunConfig& config, const warp::Rescaler& space,
                                     std::vector<std::string>* warnings) {
  const auto& h = table.header;
  if (h.size() < 3 || h[0] != "x" || h[1] != "y") throw DataError("extremes data must have columns x, y, z1, ..., zT");
  for (std::size_t k = 2; k < h.size(); ++k) {
    if (h[k] != "z" + std::to_string(k - 1)) {
      throw DataError("extremes data column " + std::to_string(k + 1) + " must be 'z" + std::to_string(k - 1) +
                      "', found '" + h[k] + "'");
    }
  }
  if (table.rows() < 2) throw DataError("extremes data needs at least two sites");
  extremes::ExtremesData d;
  d.coords = space.apply(xy(table));
  const Eigen::MatrixXd raw = table.values.rightCols(static_cast<Eigen::Index>(h.size()) - 2).transpose();
  if (!config.standardize) {
    if ((raw.array() <= 0.0).any()) throw DataError("unstandardized extremes data must be positive");
    d.obs = raw;
  } else if (config.data_type == "pareto") {
    d.obs = extremes::pareto_standardize(raw, warnings);
  } else {
    d.obs = extremes::frechet_standardize(raw, warnings);
  }
  return d;
}

FitOutput fit_model(const RunConfig& config, const io::Table& data, const engine::ProgressFn& progress) {
  const engine::FitConfig fc = fit_config(config);
  if (config.model == "gp") {
    GaussRun run;
    run.config = config;
    run.space = warp::Rescaler::fit(xy(data));
    if (config.kind == "spatio_temporal") run.time = warp::Rescaler::fit(Eigen::MatrixXd(data.col("t")));
    run.train = gauss_data(data, config, run.space, run.time, true);
    const gauss::GaussModel model(gauss_spec(config));
    engine::ParamVector params;
    model.register_params(params, run.train, {warp_rates(config), config.optimizer.rate_cov});
    const gauss::GaussStructures structures = model.build_structures(run.train);
    engine::FitResult result = engine::fit(model.objective(run.train, structures), params, fc, progress);
    run.params = result.params;
    run.fit = gauss::finalize(model, run.params, run.train, structures);
    run.trace = trace_digest(result);
    if (!run.fit.spec.spatial.empty()) {
      run.folds.push_back({"spatial", warp::fold_check(run.fit.spec.spatial, run.fit.w_spatial, run.fit.record.spatial)});
    }
    if (!run.fit.spec.spatial2.empty()) {
      run.folds.push_back(
          {"spatial2", warp::fold_check(run.fit.spec.spatial2, run.fit.w_spatial2, run.fit.record.spatial2)});
    }
    return {std::move(run), std::move(result)};
  }

  ExtremesRun run;
  run.config = config;
  run.space = warp::Rescaler::fit(xy(data));
  const extremes::ExtremesData d = extremes_data(data, config, run.space);
  const extremes::ExtremesModel model(extremes_spec(config));
  engine::ParamVector params;
  model.register_params(params, {warp_rates(config), config.optimizer.rate_vario});
  const extremes::ExtremesStructures structures = model.build_structures(d);
  engine::FitResult result = engine::fit(model.objective(d, structures), params, fc, progress);
  run.params = result.params;
  run.fit = extremes::finalize(model, run.params, d, structures);
  run.threshold = structures.threshold;
  run.pairs = static_cast<int>(structures.pairs.size());
  run.terms = static_cast<int>(structures.term_pair.size());
  run.events = static_cast<int>(structures.events.rows());
  run.excluded_pairs = structures.excluded_pairs;
  run.trace = trace_digest(result);
  if (!run.fit.spec.stack.empty()) {
    run.folds.push_back({"spatial", warp::fold_check(run.fit.spec.stack, run.fit.weights, run.fit.calibration)});
  }
  return {std::move(run), std::move(result)};
}

}  // namespace deepwarp::cli
