#include "deepwarp/error.hpp"
#include "deepwarp/extremes/extremes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deepwarp::extremes {

namespace {

// Spectral-function sampler over the distinct sites (coincident sites have gamma = 0).
class SpectralSampler {
 public:
  explicit SpectralSampler(const Eigen::MatrixXd& gamma) {
    const Index n = gamma.rows();
    if (gamma.cols() != n || n == 0) throw std::invalid_argument("semivariogram matrix must be square and nonempty");
    if (!gamma.allFinite() || (gamma.array() < 0.0).any()) throw DomainError("semivariogram values must be finite and nonnegative");
    rep_.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      Index r = -1;
      for (std::size_t u = 0; u < unique_.size() && r < 0; ++u) {
        if (gamma(i, unique_[u]) == 0.0) r = static_cast<Index>(u);
      }
      if (r < 0) {
        r = static_cast<Index>(unique_.size());
        unique_.push_back(i);
      }
      rep_[static_cast<std::size_t>(i)] = r;
    }
    const Index m = distinct();
    gamma_.resize(m, m);
    for (Index a = 0; a < m; ++a) {
      for (Index b = 0; b < m; ++b) gamma_(a, b) = gamma(unique_[a], unique_[b]);
    }
    if (m > 1) {
      Eigen::MatrixXd c(m - 1, m - 1);
      for (Index j = 1; j < m; ++j) {
        for (Index k = 1; k < m; ++k) c(j - 1, k - 1) = gamma_(j, 0) + gamma_(k, 0) - gamma_(j, k);
      }
      Eigen::LLT<Eigen::MatrixXd> llt(c);
      if (llt.info() != Eigen::Success) {
        const double jitter = 1e-10 * std::max(1.0, c.diagonal().maxCoeff());
        c.diagonal().array() += jitter;
        llt.compute(c);
        if (llt.info() != Eigen::Success) throw CholeskyError("anchored covariance is not positive definite", jitter);
      }
      chol_ = llt.matrixL();
    }
  }

  Index distinct() const { return static_cast<Index>(unique_.size()); }

  // Dieker-Mikosch normalized spectral function on the distinct sites (mean 1).
  Eigen::VectorXd draw(util::Rng& rng) const {
    const Index m = distinct();
    if (m == 1) return Eigen::VectorXd::Ones(1);
    Eigen::VectorXd eps(m - 1);
    for (Index k = 0; k < m - 1; ++k) eps(k) = rng.normal();
    Eigen::VectorXd w0(m);
    w0(0) = 0.0;
    w0.tail(m - 1) = chol_ * eps;
    const auto anchor = static_cast<Index>(rng.index(static_cast<std::uint64_t>(m)));
    Eigen::VectorXd logy = (w0.array() - w0(anchor)).matrix() - gamma_.col(anchor);
    const double top = logy.maxCoeff();
    const double lse = top + std::log((logy.array() - top).exp().sum());
    logy.array() -= lse - std::log(static_cast<double>(m));
    return logy.array().exp();
  }

  Eigen::VectorXd expand(const Eigen::VectorXd& distinct_values) const {
    Eigen::VectorXd out(static_cast<Index>(rep_.size()));
    for (std::size_t i = 0; i < rep_.size(); ++i) out(static_cast<Index>(i)) = distinct_values(rep_[i]);
    return out;
  }

  Index max_multiplicity() const {
    std::vector<Index> count(unique_.size(), 0);
    for (Index r : rep_) ++count[static_cast<std::size_t>(r)];
    return *std::max_element(count.begin(), count.end());
  }

 private:
  std::vector<Index> unique_;
  std::vector<Index> rep_;
  Eigen::MatrixXd gamma_;
  Eigen::MatrixXd chol_;
};

}  // namespace

Eigen::MatrixXd semivariogram_matrix(const warp::WarpStack& stack, const std::vector<warp::UnitWeights>& weights,
                                     const covario::VarioParams& params, const Eigen::MatrixXd& coords,
                                     const warp::Calibration* calibration) {
  const Eigen::MatrixXd w = stack.empty() ? coords : stack.forward(coords, weights, calibration);
  const Index n = w.rows();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) g(i, j) = g(j, i) = covario::vario_power(params, (w.row(i) - w.row(j)).norm());
  }
  return g;
}

Eigen::MatrixXd br_simulate_approx(const Eigen::MatrixXd& gamma, int n_fields, int n_spectral, util::Rng& rng) {
  if (n_fields < 0 || n_spectral < 1) throw ConfigError("simulation needs n_fields >= 0 and n_spectral >= 1");
  const SpectralSampler sampler(gamma);
  const Index m = sampler.distinct();
  Eigen::MatrixXd out(n_fields, gamma.rows());
  for (int f = 0; f < n_fields; ++f) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
    double arrival = 0.0;
    for (int j = 0; j < n_spectral; ++j) {
      arrival += rng.exponential();
      // Normalized spectral functions never exceed m, so later terms cannot raise any maximum.
      if (static_cast<double>(m) / arrival <= z.minCoeff()) break;
      z = z.cwiseMax(sampler.draw(rng) / arrival);
    }
    out.row(f) = sampler.expand(z).transpose();
  }
  return out;
}

Eigen::MatrixXd r_pareto_simulate(const Eigen::MatrixXd& gamma, int n_events, const Risk& risk, util::Rng& rng) {
  if (n_events < 0) throw ConfigError("n_events must be nonnegative");
  const SpectralSampler sampler(gamma);
  const auto m = static_cast<double>(sampler.distinct());
  const double bound = risk.kind == RiskKind::sum ? m * static_cast<double>(sampler.max_multiplicity()) : m;
  Eigen::MatrixXd out(n_events, gamma.rows());
  const long long max_draws = 1000000LL * std::max(1, n_events);
  long long draws = 0;
  for (int e = 0; e < n_events; ++e) {
    for (;;) {
      if (++draws > max_draws) throw NumericalError("r-Pareto rejection sampler did not converge");
      const Eigen::VectorXd y = sampler.expand(sampler.draw(rng));
      const double r = risk_eval(risk, y);
      if (!(r > 0.0) || rng.uniform() * bound >= r) continue;
      out.row(e) = (y / (r * rng.uniform_open())).transpose();
      break;
    }
  }
  return out;
}

}  // namespace deepwarp::extremes
