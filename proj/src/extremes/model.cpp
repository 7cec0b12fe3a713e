#include "deepwarp/error.hpp"
#include "deepwarp/extremes/extremes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace deepwarp::extremes {

namespace {

using ad::Var;

const std::string kPrefix = "warp";

}  // namespace

Method parse_method(std::string_view name) {
  if (name == "wls" || name == "WLS") return Method::wls;
  if (name == "pcl" || name == "PCL") return Method::pcl;
  if (name == "rpl" || name == "RPL") return Method::rpl;
  if (name == "gsm" || name == "GSM") return Method::gsm;
  throw ConfigError("unknown extremes method '" + std::string(name) + "'");
}

std::string method_name(Method method) {
  switch (method) {
    case Method::wls: return "wls";
    case Method::pcl: return "pcl";
    case Method::rpl: return "rpl";
    case Method::gsm: return "gsm";
  }
  return "wls";
}

ExtremesModel::ExtremesModel(ExtremesSpec spec) : spec_(std::move(spec)) {
  if (!spec_.stack.empty() && spec_.stack.input_dim() != 2) throw ConfigError("extremes warps must be spatial (2-D)");
  if (spec_.method == Method::gsm && !spec_.pareto) throw ConfigError("gsm needs r-Pareto exceedance data");
  if ((spec_.method == Method::pcl || spec_.method == Method::rpl) && spec_.pareto) {
    throw ConfigError(method_name(spec_.method) + " needs block-maxima data");
  }
  if (!(spec_.pcl_b > 0.0 && spec_.pcl_b <= 1.0) || !(spec_.rpl_b > 0.0 && spec_.rpl_b <= 1.0)) {
    throw ConfigError("pair retention probabilities must lie in (0, 1]");
  }
  if (!(spec_.risk_quantile > 0.0 && spec_.risk_quantile < 1.0)) throw ConfigError("risk quantile must lie in (0, 1)");
  if (spec_.risk.kind == RiskKind::site && spec_.risk.site < 0) throw ConfigError("risk site must be nonnegative");
}

void ExtremesModel::check(const ExtremesData& data) const {
  const Index n = data.sites();
  if (data.coords.cols() != 2) throw DataError("extremes coordinates must have two columns");
  if (n < 2) throw DataError("extremes models need at least two sites");
  if (data.obs.cols() != n) throw DataError("observation columns do not match the number of sites");
  if (data.replicates() < 1) throw DataError("no replicates");
  if (!data.coords.allFinite() || !data.obs.allFinite()) throw DataError("non-finite values in extremes data");
  if ((data.obs.array() <= 0.0).any()) throw DataError("standardized observations must be positive");
  if (spec_.risk.kind == RiskKind::site && spec_.risk.site >= n) throw ConfigError("risk site outside the site range");
}

void ExtremesModel::register_params(engine::ParamVector& params, const ExtremesRates& rates) const {
  if (!spec_.stack.empty()) warp::register_params(params, spec_.stack, kPrefix, rates.warp);
  const auto dep = engine::GroupRole::dependence;
  params.add("vario.range", dep, engine::Transform::exp(), Eigen::VectorXd::Constant(1, 0.5 * std::numbers::sqrt2),
             rates.vario);
  params.add("vario.smoothness", dep, engine::Transform::scaled_sigmoid(2.0), Eigen::VectorXd::Constant(1, 1.0),
             rates.vario);
}

ExtremesStructures ExtremesModel::build_structures(const ExtremesData& data) const {
  check(data);
  const Index n = data.sites(), nt = data.replicates();
  ExtremesStructures st;
  st.replicates = static_cast<int>(nt);
  PairList all;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      all.i.push_back(i);
      all.j.push_back(j);
    }
  }
  util::Rng rng(spec_.seed);

  switch (spec_.method) {
    case Method::wls: {
      std::vector<double> target, weight;
      if (!spec_.pareto) {
        st.pairs = all;
        for (Index p = 0; p < all.size(); ++p) {
          const double ec = empirical_ec(data.obs, all.i[p], all.j[p]);
          target.push_back(ec);
          weight.push_back(1.0 / ec);
        }
      } else {
        st.threshold = risk_threshold(data.obs, spec_.risk, spec_.risk_quantile);
        const std::vector<bool> kept = retained_events(data.obs, spec_.risk, st.threshold);
        for (Index p = 0; p < all.size(); ++p) {
          const auto chi = empirical_cep(data.obs, kept, all.i[p], all.j[p], st.threshold);
          if (!chi) {
            ++st.excluded_pairs;
            continue;
          }
          st.pairs.i.push_back(all.i[p]);
          st.pairs.j.push_back(all.j[p]);
          target.push_back(*chi);
          weight.push_back(1.0 / std::max(*chi, 0.05));
        }
      }
      if (st.pairs.size() == 0) throw DataError("no usable pairs for the weighted least-squares objective");
      st.target = Eigen::Map<Eigen::VectorXd>(target.data(), static_cast<Index>(target.size()));
      st.weights = Eigen::Map<Eigen::VectorXd>(weight.data(), static_cast<Index>(weight.size()));
      break;
    }
    case Method::pcl:
    case Method::rpl: {
      if (spec_.method == Method::pcl) {
        for (Index p = 0; p < all.size(); ++p) {
          if (spec_.pcl_b >= 1.0 || rng.bernoulli(spec_.pcl_b)) {
            st.pairs.i.push_back(all.i[p]);
            st.pairs.j.push_back(all.j[p]);
          }
        }
      } else {
        st.pairs = all;
      }
      std::vector<double> z1, z2;
      for (Index t = 0; t < nt; ++t) {
        for (Index p = 0; p < st.pairs.size(); ++p) {
          if (spec_.method == Method::rpl && spec_.rpl_b < 1.0 && !rng.bernoulli(spec_.rpl_b)) continue;
          st.term_pair.push_back(p);
          z1.push_back(data.obs(t, st.pairs.i[p]));
          z2.push_back(data.obs(t, st.pairs.j[p]));
        }
      }
      if (st.term_pair.empty()) throw DataError("every pair was dropped by the subsampling mask");
      st.z1 = Eigen::Map<Eigen::VectorXd>(z1.data(), static_cast<Index>(z1.size()));
      st.z2 = Eigen::Map<Eigen::VectorXd>(z2.data(), static_cast<Index>(z2.size()));
      break;
    }
    case Method::gsm: {
      st.threshold = risk_threshold(data.obs, spec_.risk, spec_.risk_quantile);
      const std::vector<bool> kept = retained_events(data.obs, spec_.risk, st.threshold);
      std::vector<Index> rows;
      for (Index t = 0; t < nt; ++t) {
        if (kept[static_cast<std::size_t>(t)]) rows.push_back(t);
      }
      if (rows.empty()) throw DataError("no retained events for score matching");
      st.events.resize(static_cast<Index>(rows.size()), n);
      for (std::size_t r = 0; r < rows.size(); ++r) st.events.row(static_cast<Index>(r)) = data.obs.row(rows[r]) / st.threshold;
      break;
    }
  }
  return st;
}

Var ExtremesModel::loss(ad::Tape& tape, const engine::Binding& params, const ExtremesData& data,
                        const ExtremesStructures& structures, warp::Calibration* record) const {
  const Var coords = tape.constant(data.coords);
  const Var w = spec_.stack.empty()
                    ? coords
                    : spec_.stack.forward(coords, warp::bind_weights(params, spec_.stack, kPrefix), nullptr, record);
  const Var& range = params["vario.range"];
  const Var& smooth = params["vario.smoothness"];
  const auto pair_gamma = [&] {
    const Var d = ad::row_norms(ad::gather_rows(w, structures.pairs.i) - ad::gather_rows(w, structures.pairs.j));
    return covario::semivariogram(d, range, smooth);
  };

  switch (spec_.method) {
    case Method::wls: {
      const Var g = pair_gamma();
      const Var model = spec_.pareto ? 2.0 - extremal_coefficient(g) : extremal_coefficient(g);
      return ad::sum(tape.constant(Eigen::MatrixXd(structures.weights)) *
                     ad::square(model - tape.constant(Eigen::MatrixXd(structures.target))));
    }
    case Method::pcl:
    case Method::rpl: {
      const Var g = ad::gather_rows(pair_gamma(), structures.term_pair);
      return -ad::sum(pair_loglik(g, structures.z1, structures.z2)) / static_cast<double>(structures.replicates);
    }
    case Method::gsm:
      return gsm_score(covario::semivariogram(ad::pairwise_dist(w), range, smooth), structures.events, spec_.risk);
  }
  throw ConfigError("unknown extremes method");
}

engine::LossFn ExtremesModel::objective(const ExtremesData& data, const ExtremesStructures& structures) const {
  return [model = *this, &data, &structures](ad::Tape& tape, const engine::Binding& params) {
    return model.loss(tape, params, data, structures);
  };
}

ExtremesFit finalize(const ExtremesModel& model, const engine::ParamVector& params, const ExtremesData& data,
                     const ExtremesStructures& structures) {
  ExtremesFit fit;
  fit.spec = model.spec();
  ad::Tape tape;
  model.loss(tape, engine::bind(tape, params), data, structures, &fit.calibration);
  if (!fit.spec.stack.empty()) fit.weights = warp::weights_from(params, fit.spec.stack, kPrefix);
  fit.vario.range = params.natural_scalar("vario.range");
  fit.vario.smoothness = params.natural_scalar("vario.smoothness");
  return fit;
}

Eigen::MatrixXd warped_sites(const ExtremesFit& fit, const Eigen::MatrixXd& coords) {
  if (fit.spec.stack.empty()) return coords;
  return fit.spec.stack.forward(coords, fit.weights, &fit.calibration);
}

double fitted_semivariogram(const ExtremesFit& fit, const Eigen::Vector2d& s1, const Eigen::Vector2d& s2) {
  Eigen::MatrixXd s(2, 2);
  s.row(0) = s1.transpose();
  s.row(1) = s2.transpose();
  const Eigen::MatrixXd w = warped_sites(fit, s);
  return covario::vario_power(fit.vario, (w.row(0) - w.row(1)).norm());
}

}  // namespace deepwarp::extremes
