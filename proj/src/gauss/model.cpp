#include "deepwarp/error.hpp"
#include "deepwarp/gauss/gauss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace deepwarp::gauss {

namespace {

using ad::Matrix;
using ad::Var;
using ad::Vector;

// Residual variance of an ordinary least-squares fit (variance of z when q = 0).
double ols_residual_variance(const Eigen::MatrixXd& x, const Eigen::VectorXd& z) {
  const Index n = z.size();
  Vector r = z.array() - z.mean();
  Index dof = n - 1;
  if (x.cols() > 0 && x.cols() < n) {
    const Vector beta = x.colPivHouseholderQr().solve(z);
    r = z - x * beta;
    dof = n - x.cols();
  }
  const double v = dof > 0 ? r.squaredNorm() / static_cast<double>(dof) : 1.0;
  return v > 1e-12 ? v : 1.0;
}

std::vector<Index> rows_of(const Eigen::VectorXi& process, int p) {
  std::vector<Index> out;
  for (Index i = 0; i < process.size(); ++i) {
    if (process(i) == p) out.push_back(i);
  }
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Index>& rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

Var warp_or_identity(const warp::WarpStack& stack, const engine::Binding& params, const std::string& prefix,
                     const Var& coords, warp::Calibration* record) {
  if (stack.empty()) return coords;
  return stack.forward(coords, warp::bind_weights(params, stack, prefix), nullptr, record);
}

// Covariance of Z on the tape over an arbitrary row subset.
struct TapeCov {
  const GaussSpec* spec = nullptr;
  const GaussData* data = nullptr;
  Var space, time;
  Var variance, variance2, lengthscale, t_lengthscale, noise, noise2, rho;

  Var block(const std::vector<Index>* rows, double jitter) const {
    ad::Tape& t = *space.tape();
    const Var s = rows != nullptr ? ad::gather_rows(space, *rows) : space;
    Var corr = covario::correlation(spec->family, ad::pairwise_dist(s), lengthscale);
    if (time.valid()) {
      const Var tt = rows != nullptr ? ad::gather_rows(time, *rows) : time;
      corr = corr * covario::correlation(spec->family, ad::pairwise_dist(tt), t_lengthscale);
    }
    if (spec->kind != ModelKind::bivariate) return ad::add_diag(variance * corr, noise + jitter);

    const Index k = s.rows();
    Vector m0(k), m1(k);
    for (Index r = 0; r < k; ++r) {
      const int p = data->process(rows != nullptr ? (*rows)[static_cast<std::size_t>(r)] : r);
      m0(r) = p == 0 ? 1.0 : 0.0;
      m1(r) = 1.0 - m0(r);
    }
    const Matrix same = m0 * m0.transpose() + m1 * m1.transpose();
    const Var c0 = t.constant(m0), c1 = t.constant(m1);
    const Var sd = ad::sqrt(variance * c0 + variance2 * c1);
    const Var scale = ad::matmul(sd, ad::transpose(sd)) * (t.constant(same) + rho * t.constant(1.0 - same.array()));
    return ad::add_diag(corr * scale, noise * c0 + noise2 * c1 + jitter);
  }
};

}  // namespace

Backend parse_backend(std::string_view name) {
  if (name == "exact") return Backend::exact;
  if (name == "nngp") return Backend::nngp;
  if (name == "frk") return Backend::frk;
  throw ConfigError("unknown backend '" + std::string(name) + "'");
}

std::string backend_name(Backend backend) {
  switch (backend) {
    case Backend::exact: return "exact";
    case Backend::nngp: return "nngp";
    case Backend::frk: return "frk";
  }
  return "exact";
}

GaussModel::GaussModel(GaussSpec spec) : spec_(std::move(spec)) {
  if (!spec_.spatial.empty() && spec_.spatial.input_dim() != 2) throw ConfigError("spatial warp must be two-dimensional");
  if (!spec_.spatial2.empty() && spec_.spatial2.input_dim() != 2) throw ConfigError("second-process warp must be two-dimensional");
  if (!spec_.temporal.empty() && spec_.temporal.input_dim() != 1) throw ConfigError("temporal warp must be one-dimensional");
  if (spec_.kind != ModelKind::spatio_temporal && !spec_.temporal.empty()) {
    throw ConfigError("temporal warp given for a model without time");
  }
  if (spec_.kind != ModelKind::bivariate && !spec_.spatial2.empty()) {
    throw ConfigError("second-process warp given for a univariate model");
  }
  if (spec_.backend == Backend::frk && spec_.kind != ModelKind::spatial) {
    throw UnsupportedError("frk backend supports univariate spatial models only");
  }
  if (spec_.backend == Backend::nngp && spec_.neighbors < 1) throw ConfigError("nngp: neighbours must be at least 1");
  if (spec_.backend == Backend::frk) frk_side(spec_.basis, 1 << 30);
}

void GaussModel::check(const GaussData& data) const {
  const Index n = data.size();
  if (n < 1) throw DataError("no observations");
  if (data.coords.cols() != 2) throw DataError("coordinates must have two columns");
  if (data.z.size() != n) throw DataError("response length differs from number of rows");
  if (data.x.rows() != n) throw DataError("covariate rows differ from number of observations");
  if (!data.coords.allFinite() || !data.z.allFinite() || !data.x.allFinite()) throw DataError("non-finite values in data");
  if (spec_.kind == ModelKind::spatio_temporal) {
    if (data.times.size() != n) throw DataError("spatio-temporal model needs a time for every row");
    if (!data.times.allFinite()) throw DataError("non-finite times");
  }
  if (spec_.kind == ModelKind::bivariate) {
    if (data.process.size() != n) throw DataError("bivariate model needs a process label for every row");
    if ((data.process.array() < 0).any() || (data.process.array() > 1).any()) throw DataError("process labels must be 0 or 1");
    if (rows_of(data.process, 0).empty() || rows_of(data.process, 1).empty()) {
      throw DataError("bivariate model needs observations of both processes");
    }
  }
  if (design(data).cols() > n) throw DataError("more trend columns than observations");
}

Eigen::MatrixXd GaussModel::design(const GaussData& data) const {
  if (spec_.kind != ModelKind::bivariate) return data.x;
  const Index q = data.x.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(data.x.rows(), 2 * q);
  for (Index i = 0; i < data.x.rows(); ++i) out.row(i).segment(data.process(i) == 0 ? 0 : q, q) = data.x.row(i);
  return out;
}

void GaussModel::register_params(engine::ParamVector& params, const GaussData& data, const GaussRates& rates) const {
  check(data);
  const auto one = [](double v) { return Eigen::VectorXd::Constant(1, v); };
  if (!spec_.spatial.empty()) warp::register_params(params, spec_.spatial, "warp", rates.warp);
  if (!spec_.temporal.empty()) warp::register_params(params, spec_.temporal, "twarp", rates.warp);
  if (!spec_.spatial2.empty()) warp::register_params(params, spec_.spatial2, "warp2", rates.warp);

  const auto dep = engine::GroupRole::dependence;
  double v1 = 1.0, v2 = 1.0;
  if (spec_.kind == ModelKind::bivariate) {
    const auto r0 = rows_of(data.process, 0), r1 = rows_of(data.process, 1);
    v1 = ols_residual_variance(take_rows(data.x, r0), take_rows(data.z, r0).col(0));
    v2 = ols_residual_variance(take_rows(data.x, r1), take_rows(data.z, r1).col(0));
  } else {
    v1 = ols_residual_variance(data.x, data.z);
  }
  params.add("cov.variance", dep, engine::Transform::exp(), one(v1), rates.cov);
  params.add("cov.lengthscale", dep, engine::Transform::exp(), one(0.5 * std::numbers::sqrt2), rates.cov);
  if (spec_.kind == ModelKind::spatio_temporal) {
    params.add("cov.t_lengthscale", dep, engine::Transform::exp(), one(0.5), rates.cov);
  }
  params.add("noise.variance", dep, engine::Transform::exp(), one(0.1 * v1), rates.cov);
  if (spec_.kind == ModelKind::bivariate) {
    params.add("cov.variance2", dep, engine::Transform::exp(), one(v2), rates.cov);
    params.add("noise.variance2", dep, engine::Transform::exp(), one(0.1 * v2), rates.cov);
    params.add("cov.rho", dep, engine::Transform::scaled_tanh(1.0), one(0.0), rates.cov);
  }
}

GaussStructures GaussModel::build_structures(const GaussData& data) const {
  check(data);
  GaussStructures out;
  if (spec_.backend == Backend::nngp) {
    Eigen::MatrixXd pts = data.coords;
    if (spec_.kind == ModelKind::spatio_temporal) {
      pts.conservativeResize(Eigen::NoChange, 3);
      pts.col(2) = data.times;
    }
    out.nngp = build_nngp(spec_.order_seed, pts, spec_.neighbors);
  } else if (spec_.backend == Backend::frk) {
    out.frk_side = frk_side(spec_.basis, data.size());
  }
  return out;
}

Var GaussModel::loglik(ad::Tape& tape, const engine::Binding& params, const GaussData& data,
                       const GaussStructures& structures, FitRecord* record) const {
  check(data);
  const Eigen::MatrixXd x = design(data);
  TapeCov cov;
  cov.spec = &spec_;
  cov.data = &data;

  if (spec_.kind == ModelKind::bivariate) {
    const auto r0 = rows_of(data.process, 0), r1 = rows_of(data.process, 1);
    const Var w0 = warp_or_identity(spec_.spatial, params, "warp", tape.constant(take_rows(data.coords, r0)),
                                    record != nullptr ? &record->spatial : nullptr);
    const Var w1 = warp_or_identity(spec_.spatial2, params, "warp2", tape.constant(take_rows(data.coords, r1)),
                                    record != nullptr ? &record->spatial2 : nullptr);
    std::vector<Index> pos(static_cast<std::size_t>(data.size()));
    for (std::size_t k = 0; k < r0.size(); ++k) pos[static_cast<std::size_t>(r0[k])] = static_cast<Index>(k);
    for (std::size_t k = 0; k < r1.size(); ++k) pos[static_cast<std::size_t>(r1[k])] = static_cast<Index>(r0.size() + k);
    cov.space = ad::gather_rows(ad::vcat({w0, w1}), pos);
  } else {
    cov.space = warp_or_identity(spec_.spatial, params, "warp", tape.constant(data.coords),
                                 record != nullptr ? &record->spatial : nullptr);
  }
  if (spec_.kind == ModelKind::spatio_temporal) {
    cov.time = warp_or_identity(spec_.temporal, params, "twarp", tape.constant(Eigen::MatrixXd(data.times)),
                                record != nullptr ? &record->temporal : nullptr);
    cov.t_lengthscale = params["cov.t_lengthscale"];
  }
  cov.variance = params["cov.variance"];
  cov.lengthscale = params["cov.lengthscale"];
  cov.noise = params["noise.variance"];
  double jitter_scale = cov.variance.scalar();
  if (spec_.kind == ModelKind::bivariate) {
    cov.variance2 = params["cov.variance2"];
    cov.noise2 = params["noise.variance2"];
    cov.rho = params["cov.rho"];
    jitter_scale = std::max(jitter_scale, cov.variance2.scalar());
  }

  GlsResult* gls = record != nullptr ? &record->gls : nullptr;
  switch (spec_.backend) {
    case Backend::exact:
      return reml_loglik(cov.block(nullptr, 0.0), x, data.z, jitter_scale, gls);
    case Backend::nngp:
      return nngp_loglik([&cov](const std::vector<Index>& rows, double jitter) { return cov.block(&rows, jitter); },
                         structures.nngp, x, data.z, jitter_scale, gls);
    case Backend::frk:
      return frk_loglik(cov.space, structures.frk_side, cov.variance, cov.lengthscale, cov.noise, x, data.z,
                        record != nullptr ? &record->frk : nullptr, gls);
  }
  throw ConfigError("unknown backend");
}

engine::LossFn GaussModel::objective(const GaussData& data, const GaussStructures& structures) const {
  return [model = *this, &data, &structures](ad::Tape& tape, const engine::Binding& params) {
    return -model.loglik(tape, params, data, structures);
  };
}

GaussFit finalize(const GaussModel& model, const engine::ParamVector& params, const GaussData& data,
                  const GaussStructures& structures) {
  const GaussSpec& spec = model.spec();
  GaussFit fit;
  fit.spec = spec;
  fit.structures = structures;
  ad::Tape tape;
  const engine::Binding binding = engine::bind(tape, params);
  model.loglik(tape, binding, data, structures, &fit.record);
  if (!spec.spatial.empty()) fit.w_spatial = warp::weights_from(params, spec.spatial, "warp");
  if (!spec.temporal.empty()) fit.w_temporal = warp::weights_from(params, spec.temporal, "twarp");
  if (!spec.spatial2.empty()) fit.w_spatial2 = warp::weights_from(params, spec.spatial2, "warp2");
  fit.variance = params.natural_scalar("cov.variance");
  fit.lengthscale = params.natural_scalar("cov.lengthscale");
  fit.noise = params.natural_scalar("noise.variance");
  if (params.contains("cov.t_lengthscale")) fit.t_lengthscale = params.natural_scalar("cov.t_lengthscale");
  if (params.contains("cov.variance2")) {
    fit.variance2 = params.natural_scalar("cov.variance2");
    fit.noise2 = params.natural_scalar("noise.variance2");
    fit.rho = params.natural_scalar("cov.rho");
  }
  return fit;
}

}  // namespace deepwarp::gauss
