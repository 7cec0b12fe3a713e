#include "deepwarp/error.hpp"
#include "deepwarp/extremes/extremes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deepwarp::extremes {

namespace {

// Average ranks (1-based) of one column.
Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&x](Index a, Index b) { return x(a) < x(b); });
  Eigen::VectorXd r(n);
  for (Index lo = 0; lo < n;) {
    Index hi = lo;
    while (hi + 1 < n && x(order[hi + 1]) == x(order[lo])) ++hi;
    const double avg = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (Index k = lo; k <= hi; ++k) r(order[k]) = avg;
    lo = hi + 1;
  }
  return r;
}

Eigen::MatrixXd rank_matrix(const Eigen::MatrixXd& raw, std::vector<std::string>* warnings) {
  if (raw.rows() == 0 || raw.cols() == 0) throw DataError("no observations to standardize");
  if (!raw.allFinite()) throw DataError("observations contain non-finite values");
  if (raw.rows() < 20 && warnings != nullptr) {
    warnings->push_back("only " + std::to_string(raw.rows()) + " replicates; rank margins are unreliable");
  }
  Eigen::MatrixXd r(raw.rows(), raw.cols());
  for (Index j = 0; j < raw.cols(); ++j) {
    if (raw.col(j).maxCoeff() == raw.col(j).minCoeff()) {
      throw DataError("site " + std::to_string(j) + " has a constant column");
    }
    r.col(j) = average_ranks(raw.col(j));
  }
  return r;
}

void check_site(const Eigen::MatrixXd& x, Index i) {
  if (i < 0 || i >= x.cols()) throw std::out_of_range("site index out of range");
}

}  // namespace

Eigen::MatrixXd frechet_standardize(const Eigen::MatrixXd& raw, std::vector<std::string>* warnings) {
  const double t1 = static_cast<double>(raw.rows()) + 1.0;
  return rank_matrix(raw, warnings).unaryExpr([t1](double r) { return -1.0 / std::log(r / t1); });
}

Eigen::MatrixXd pareto_standardize(const Eigen::MatrixXd& raw, std::vector<std::string>* warnings) {
  const double t1 = static_cast<double>(raw.rows()) + 1.0;
  return rank_matrix(raw, warnings).unaryExpr([t1](double r) { return t1 / (t1 - r); });
}

Risk parse_risk(std::string_view name, Index site) {
  if (name == "max") return {RiskKind::max, 0};
  if (name == "sum") return {RiskKind::sum, 0};
  if (name == "site") {
    if (site < 0) throw ConfigError("risk site must be nonnegative");
    return {RiskKind::site, site};
  }
  throw ConfigError("unknown risk functional '" + std::string(name) + "'");
}

std::string risk_name(const Risk& risk) {
  switch (risk.kind) {
    case RiskKind::max: return "max";
    case RiskKind::sum: return "sum";
    case RiskKind::site: return "site";
  }
  return "sum";
}

double risk_eval(const Risk& risk, const Eigen::VectorXd& x) {
  switch (risk.kind) {
    case RiskKind::max: return x.maxCoeff();
    case RiskKind::sum: return x.sum();
    case RiskKind::site:
      if (risk.site >= x.size()) throw ConfigError("risk site outside the site range");
      return x(risk.site);
  }
  return 0.0;
}

Eigen::VectorXd risk_grad(const Risk& risk, const Eigen::VectorXd& x) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  switch (risk.kind) {
    case RiskKind::max: {
      Index k = 0;
      x.maxCoeff(&k);
      g(k) = 1.0;
      break;
    }
    case RiskKind::sum: g.setOnes(); break;
    case RiskKind::site:
      if (risk.site >= x.size()) throw ConfigError("risk site outside the site range");
      g(risk.site) = 1.0;
      break;
  }
  return g;
}

double empirical_ec(const Eigen::MatrixXd& maxima, Index i, Index j) {
  check_site(maxima, i);
  check_site(maxima, j);
  if (i == j) return 1.0;
  const double t = static_cast<double>(maxima.rows());
  if (maxima.rows() == 0) throw DataError("no replicates");
  const Eigen::ArrayXd fi = average_ranks(maxima.col(i)).array() / t;
  const Eigen::ArrayXd fj = average_ranks(maxima.col(j)).array() / t;
  const double nu = 0.5 * (fi - fj).abs().mean();
  if (nu >= 0.5) return 2.0;
  return std::clamp((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu), 1.0, 2.0);
}

std::vector<bool> retained_events(const Eigen::MatrixXd& x, const Risk& risk, double u) {
  if (!(u > 0.0)) throw DomainError("risk threshold must be positive");
  std::vector<bool> keep(static_cast<std::size_t>(x.rows()));
  for (Index t = 0; t < x.rows(); ++t) {
    keep[static_cast<std::size_t>(t)] = risk_eval(risk, Eigen::VectorXd(x.row(t).transpose() / u)) >= 1.0;
  }
  return keep;
}

std::optional<double> empirical_cep(const Eigen::MatrixXd& x, const std::vector<bool>& retained, Index i, Index j,
                                    double u2) {
  check_site(x, i);
  check_site(x, j);
  if (retained.size() != static_cast<std::size_t>(x.rows())) throw std::invalid_argument("retained mask size");
  int den = 0, num = 0;
  for (Index t = 0; t < x.rows(); ++t) {
    if (!retained[static_cast<std::size_t>(t)] || x(t, i) < u2) continue;
    ++den;
    if (x(t, j) >= u2) ++num;
  }
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / den;
}

double risk_threshold(const Eigen::MatrixXd& x, const Risk& risk, double quantile) {
  if (!(quantile > 0.0 && quantile < 1.0)) throw ConfigError("risk quantile must lie in (0, 1)");
  if (x.rows() == 0) throw DataError("no replicates");
  std::vector<double> r(static_cast<std::size_t>(x.rows()));
  for (Index t = 0; t < x.rows(); ++t) r[static_cast<std::size_t>(t)] = risk_eval(risk, x.row(t).transpose());
  std::sort(r.begin(), r.end());
  const double h = quantile * static_cast<double>(r.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, r.size() - 1);
  return r[lo] + (h - static_cast<double>(lo)) * (r[hi] - r[lo]);
}

}  // namespace deepwarp::extremes
