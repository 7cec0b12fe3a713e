#include "deepwarp/warp/warp.hpp"

#include "deepwarp/error.hpp"

#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace deepwarp::warp {

namespace {

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ad::Var replace_col(const ad::Var& m, Eigen::Index j, const ad::Var& c) {
  std::vector<ad::Var> cols;
  for (Eigen::Index k = 0; k < m.cols(); ++k) cols.push_back(k == j ? c : ad::col(m, k));
  return ad::hcat(cols);
}

constexpr double kMinWidth = 1e-12;

// Affine map of one column onto [-0.5, 0.5]; differentiable min/max unless frozen.
ad::Var renorm_col(const ad::Var& c, const AxisRange* frozen, AxisRange* rec) {
  if (frozen != nullptr) return (c - frozen->lo) / (frozen->hi - frozen->lo) - 0.5;
  const ad::Var lo = ad::min_elem(c);
  const ad::Var hi = ad::max_elem(c);
  const double width = hi.scalar() - lo.scalar();
  if (width < kMinWidth) {
    // A single distinct value cannot be rescaled; centre it instead.
    const double mid = 0.5 * (hi.scalar() + lo.scalar());
    if (rec != nullptr) *rec = {mid - 0.5, mid + 0.5};
    return c - mid;
  }
  if (rec != nullptr) *rec = {lo.scalar(), hi.scalar()};
  return (c - lo) / (hi - lo) - 0.5;
}

ad::Var scalar_at(const ad::Var& w, Eigen::Index i) { return ad::block(w, i, 0, 1, 1); }

void expect_size(const ad::Var& v, Eigen::Index n, const char* what) {
  if (v.rows() != n || v.cols() != 1) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + " weights, got " +
                                std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// AxialWarpUnit

AxialWarpUnit::AxialWarpUnit(int dim, int r, double steepness, AxisRange lims)
    : dim_(dim), steepness_(steepness), lims_(lims) {
  if (r < 1) throw ConfigError("AWU: basis count r must be >= 1");
  if (!(steepness > 0.0)) throw ConfigError("AWU: steepness must be > 0");
  if (dim < 1) throw ConfigError("AWU: dim is 1-based and must be >= 1");
  if (!(lims.hi > lims.lo)) throw ConfigError("AWU: lims must satisfy lo < hi");
  for (int i = 2; i <= r; ++i) {
    centers_.push_back(lims.lo + static_cast<double>(i - 1) * (lims.hi - lims.lo) / static_cast<double>(r - 1));
  }
}

AxialWarpUnit AxialWarpUnit::with_centers(int dim, double steepness, std::vector<double> centers, AxisRange lims) {
  if (!(steepness > 0.0)) throw ConfigError("AWU: steepness must be > 0");
  if (dim < 1) throw ConfigError("AWU: dim is 1-based and must be >= 1");
  if (!(lims.hi > lims.lo)) throw ConfigError("AWU: lims must satisfy lo < hi");
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (centers[i] < lims.lo || centers[i] > lims.hi) throw ConfigError("AWU: center outside lims");
    if (i > 0 && !(centers[i] > centers[i - 1])) throw ConfigError("AWU: centers must be strictly increasing");
  }
  AxialWarpUnit u;
  u.dim_ = dim;
  u.steepness_ = steepness;
  u.centers_ = std::move(centers);
  u.lims_ = lims;
  return u;
}

double AxialWarpUnit::eval(double s, double linear, const Eigen::VectorXd& sigmoid_weights) const {
  if (sigmoid_weights.size() != static_cast<Eigen::Index>(centers_.size())) {
    throw std::invalid_argument("AWU::eval: weight count mismatch");
  }
  double out = linear * s;
  for (std::size_t i = 0; i < centers_.size(); ++i) {
    out += sigmoid_weights(static_cast<Eigen::Index>(i)) * sigmoid_value(steepness_ * (s - centers_[i]));
  }
  return out;
}

ad::Var AxialWarpUnit::apply(const ad::Var& coords, const ad::Var& linear, const ad::Var& sigmoid_weights) const {
  if (axis() >= coords.cols()) throw ConfigError("AWU: dim exceeds coordinate dimension");
  expect_size(linear, 1, "AWU linear weight");
  const auto k = static_cast<Eigen::Index>(centers_.size());
  expect_size(sigmoid_weights, k, "AWU sigmoid weights");
  ad::Tape& t = *coords.tape();
  const ad::Var s = ad::col(coords, axis());
  ad::Var out = linear * s;
  if (k > 0) {
    Eigen::MatrixXd c(1, k);
    for (Eigen::Index i = 0; i < k; ++i) c(0, i) = centers_[static_cast<std::size_t>(i)];
    const ad::Var diff = ad::broadcast_col(s, k) - t.constant(c.replicate(coords.rows(), 1));
    out = out + ad::matmul(ad::sigmoid(steepness_ * diff), sigmoid_weights);
  }
  return replace_col(coords, axis(), out);
}

// ---------------------------------------------------------------------------
// RbfBlockUnit

RbfBlockUnit::RbfBlockUnit(int res) : res_(res) {
  if (res < 1) throw ConfigError("RBF: resolution must be >= 1");
  const int per_axis = static_cast<int>(std::lround(std::pow(3.0, res)));
  spacing_ = 1.0 / static_cast<double>(per_axis);
  bandwidth_ = 1.0 / (2.0 * spacing_ * spacing_);
  centers_.resize(per_axis * per_axis, 2);
  int row = 0;
  for (int i = 0; i < per_axis; ++i) {
    for (int j = 0; j < per_axis; ++j) {
      centers_(row, 0) = -0.5 + static_cast<double>(i) / static_cast<double>(per_axis - 1);
      centers_(row, 1) = -0.5 + static_cast<double>(j) / static_cast<double>(per_axis - 1);
      ++row;
    }
  }
}

Eigen::Vector2d RbfBlockUnit::eval(const Eigen::Vector2d& s, const Eigen::VectorXd& weights) const {
  if (weights.size() != centers_.rows()) throw std::invalid_argument("RBF::eval: weight count mismatch");
  Eigen::Vector2d out = s;
  for (Eigen::Index c = 0; c < centers_.rows(); ++c) {
    const Eigen::Vector2d d = s - centers_.row(c).transpose();
    out += weights(c) * std::exp(-bandwidth_ * d.squaredNorm()) * d;
  }
  return out;
}

ad::Var RbfBlockUnit::apply(const ad::Var& coords, const ad::Var& weights) const {
  if (coords.cols() != 2) throw ConfigError("RBF unit requires 2-D coordinates");
  expect_size(weights, centers_.rows(), "RBF weights");
  ad::Tape& t = *coords.tape();
  const ad::Var c = t.constant(centers_);
  const ad::Var kw = ad::scale_cols(ad::exp(-bandwidth_ * ad::pairwise_sqdist(coords, c)), weights);
  const ad::Var mass = ad::row_sums(kw);
  std::vector<ad::Var> cols;
  for (Eigen::Index j = 0; j < 2; ++j) {
    const ad::Var x = ad::col(coords, j);
    cols.push_back(x + mass * x - ad::matmul(kw, ad::col(c, j)));
  }
  return ad::hcat(cols);
}

// ---------------------------------------------------------------------------
// MobiusUnit

Eigen::VectorXd MobiusUnit::identity_weights() {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(8);
  w(0) = 1.0;
  w(6) = 1.0;
  return w;
}

Eigen::Vector2d MobiusUnit::eval(const Eigen::Vector2d& s, const Eigen::VectorXd& w) const {
  if (w.size() != 8) throw std::invalid_argument("Moebius::eval: expected 8 weights");
  const double x = s(0), y = s(1);
  const double nr = w(0) * x - w(1) * y + w(2);
  const double ni = w(0) * y + w(1) * x + w(3);
  const double dr = w(4) * x - w(5) * y + w(6);
  const double di = w(4) * y + w(5) * x + w(7);
  const double den = dr * dr + di * di;
  if (std::sqrt(den) < kPoleTolerance) throw PoleError("Moebius pole", x, y);
  return {(nr * dr + ni * di) / den, (ni * dr - nr * di) / den};
}

ad::Var MobiusUnit::apply(const ad::Var& coords, const ad::Var& w) const {
  if (coords.cols() != 2) throw ConfigError("Moebius unit requires 2-D coordinates");
  expect_size(w, 8, "Moebius weights");
  const Eigen::VectorXd wv = w.value().col(0);
  const double det_re = wv(0) * wv(6) - wv(1) * wv(7) - (wv(2) * wv(4) - wv(3) * wv(5));
  const double det_im = wv(0) * wv(7) + wv(1) * wv(6) - (wv(2) * wv(5) + wv(3) * wv(4));
  if (std::hypot(det_re, det_im) < 1e-12) throw NumericalError("degenerate Moebius transformation (w1 w4 = w2 w3)");

  const ad::Var x = ad::col(coords, 0);
  const ad::Var y = ad::col(coords, 1);
  const ad::Var dr = scalar_at(w, 4) * x - scalar_at(w, 5) * y + scalar_at(w, 6);
  const ad::Var di = scalar_at(w, 4) * y + scalar_at(w, 5) * x + scalar_at(w, 7);
  const ad::Var den = ad::square(dr) + ad::square(di);
  const Eigen::MatrixXd& dv = den.value();
  for (Eigen::Index i = 0; i < dv.rows(); ++i) {
    if (std::sqrt(dv(i, 0)) < kPoleTolerance) {
      throw PoleError("Moebius pole", coords.value()(i, 0), coords.value()(i, 1));
    }
  }
  const ad::Var nr = scalar_at(w, 0) * x - scalar_at(w, 1) * y + scalar_at(w, 2);
  const ad::Var ni = scalar_at(w, 0) * y + scalar_at(w, 1) * x + scalar_at(w, 3);
  return ad::hcat({(nr * dr + ni * di) / den, (ni * dr - nr * di) / den});
}

std::string unit_kind(const WarpUnit& unit) {
  return std::visit(
      [](const auto& u) -> std::string {
        using T = std::decay_t<decltype(u)>;
        if constexpr (std::is_same_v<T, AxialWarpUnit>) return "AWU";
        if constexpr (std::is_same_v<T, RbfBlockUnit>) return "RBF";
        return "LFT";
      },
      unit);
}

// ---------------------------------------------------------------------------
// WarpStack

WarpStack::WarpStack(int input_dim, std::vector<WarpUnit> units, bool renormalize)
    : input_dim_(input_dim), units_(std::move(units)), renormalize_(renormalize) {
  if (input_dim != 1 && input_dim != 2) throw ConfigError("warp stack input dimension must be 1 or 2");
  for (const auto& u : units_) {
    if (const auto* a = std::get_if<AxialWarpUnit>(&u)) {
      if (a->dim() > input_dim) throw ConfigError("AWU dim exceeds the stack's input dimension");
    } else if (input_dim != 2) {
      throw ConfigError(unit_kind(u) + " unit requires a 2-D stack");
    }
  }
}

ad::Var WarpStack::forward(const ad::Var& coords, const std::vector<UnitVars>& weights, const Calibration* frozen,
                           Calibration* record) const {
  if (coords.cols() != input_dim_) {
    throw DataError("warp stack expects " + std::to_string(input_dim_) + "-D coordinates, got " +
                    std::to_string(coords.cols()));
  }
  if (weights.size() != units_.size()) throw std::invalid_argument("warp stack: weight set count mismatch");
  if (frozen != nullptr && renormalize_ && frozen->units.size() != units_.size()) {
    throw std::invalid_argument("warp stack: calibration does not match the stack");
  }
  if (record != nullptr) record->units.clear();

  ad::Var s = coords;
  for (std::size_t k = 0; k < units_.size(); ++k) {
    const auto& parts = weights[k].parts;
    std::vector<Eigen::Index> axes;
    try {
      if (const auto* a = std::get_if<AxialWarpUnit>(&units_[k])) {
        s = a->apply(s, parts.at(0), parts.at(1));
        axes = {a->axis()};
      } else if (const auto* r = std::get_if<RbfBlockUnit>(&units_[k])) {
        s = r->apply(s, parts.at(0));
        axes = {0, 1};
      } else {
        s = std::get<MobiusUnit>(units_[k]).apply(s, parts.at(0));
        axes = {0, 1};
      }
    } catch (const PoleError& e) {
      throw PoleError("warp unit " + std::to_string(k) + ": Moebius pole", e.x(), e.y());
    } catch (const NumericalError& e) {
      throw NumericalError("warp unit " + std::to_string(k) + ": " + e.what());
    }
    if (!renormalize_) continue;
    std::vector<AxisRange> ranges(axes.size());
    for (std::size_t j = 0; j < axes.size(); ++j) {
      const AxisRange* fr = frozen != nullptr ? &frozen->units[k].at(j) : nullptr;
      s = replace_col(s, axes[j], renorm_col(ad::col(s, axes[j]), fr, &ranges[j]));
      if (fr != nullptr) ranges[j] = *fr;
    }
    if (record != nullptr) record->units.push_back(std::move(ranges));
  }
  return s;
}

Eigen::MatrixXd WarpStack::forward(const Eigen::MatrixXd& coords, const std::vector<UnitWeights>& weights,
                                   const Calibration* frozen, Calibration* record) const {
  ad::Tape t;
  std::vector<UnitVars> vars(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    for (const auto& p : weights[k].parts) vars[k].parts.push_back(t.constant(ad::Matrix(p)));
  }
  return forward(t.constant(coords), vars, frozen, record).value();
}

std::vector<UnitWeights> WarpStack::identity_weights() const {
  std::vector<UnitWeights> out;
  for (const auto& u : units_) {
    UnitWeights w;
    if (const auto* a = std::get_if<AxialWarpUnit>(&u)) {
      w.parts = {Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(a->basis_count() - 1)};
    } else if (const auto* r = std::get_if<RbfBlockUnit>(&u)) {
      w.parts = {Eigen::VectorXd::Zero(r->center_count())};
    } else {
      w.parts = {MobiusUnit::identity_weights()};
    }
    out.push_back(std::move(w));
  }
  return out;
}

WarpStack default_layers(LayerKind kind, int r, double steepness, AxisRange lims) {
  if (kind == LayerKind::temporal) return WarpStack(1, {AxialWarpUnit(1, r, steepness, lims)});
  return WarpStack(2, {AxialWarpUnit(1, r, steepness, lims), AxialWarpUnit(2, r, steepness, lims), RbfBlockUnit(1),
                       MobiusUnit{}});
}

// ---------------------------------------------------------------------------
// Rescaler

Rescaler Rescaler::fit(const Eigen::MatrixXd& coords) {
  if (coords.rows() == 0) throw DataError("no coordinates to rescale");
  Rescaler r;
  r.lo = coords.colwise().minCoeff().transpose();
  r.hi = coords.colwise().maxCoeff().transpose();
  for (Eigen::Index j = 0; j < coords.cols(); ++j) {
    if (!(r.hi(j) > r.lo(j))) throw DataError("coordinate column " + std::to_string(j + 1) + " is constant");
  }
  return r;
}

Eigen::MatrixXd Rescaler::apply(const Eigen::MatrixXd& coords) const {
  if (coords.cols() != lo.size()) throw DataError("coordinate dimension does not match the rescaling map");
  Eigen::MatrixXd out(coords.rows(), coords.cols());
  for (Eigen::Index j = 0; j < coords.cols(); ++j) {
    out.col(j) = ((coords.col(j).array() - lo(j)) / (hi(j) - lo(j)) - 0.5).matrix();
  }
  return out;
}

std::vector<bool> Rescaler::outside(const Eigen::MatrixXd& coords, double tol) const {
  const Eigen::MatrixXd r = apply(coords);
  std::vector<bool> out(static_cast<std::size_t>(r.rows()), false);
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = (r.row(i).array().abs() > 0.5 + tol).any();
  }
  return out;
}

// ---------------------------------------------------------------------------
// fold check

FoldReport fold_check(const WarpStack& stack, const std::vector<UnitWeights>& weights, const Calibration& calibration,
                      int grid) {
  if (grid < 2) throw std::invalid_argument("fold_check: grid must be >= 2");
  const Calibration* cal = stack.renormalize() ? &calibration : nullptr;
  FoldReport rep;
  auto tally = [&rep](double v) {
    if (v > 0.0) {
      ++rep.positive;
    } else if (v < 0.0) {
      ++rep.negative;
    } else {
      ++rep.degenerate;
    }
  };
  auto at = [grid](int i) { return -0.5 + static_cast<double>(i) / static_cast<double>(grid - 1); };

  if (stack.input_dim() == 1) {
    Eigen::MatrixXd p(grid, 1);
    for (int i = 0; i < grid; ++i) p(i, 0) = at(i);
    const Eigen::MatrixXd w = stack.forward(p, weights, cal);
    for (int i = 0; i + 1 < grid; ++i) tally(w(i + 1, 0) - w(i, 0));
  } else {
    Eigen::MatrixXd p(grid * grid, 2);
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) p.row(i * grid + j) << at(i), at(j);
    }
    const Eigen::MatrixXd w = stack.forward(p, weights, cal);
    for (int i = 0; i + 1 < grid; ++i) {
      for (int j = 0; j + 1 < grid; ++j) {
        const Eigen::RowVector2d a = w.row((i + 1) * grid + j + 1) - w.row(i * grid + j);
        const Eigen::RowVector2d b = w.row(i * grid + j + 1) - w.row((i + 1) * grid + j);
        tally(0.5 * (a(0) * b(1) - a(1) * b(0)));
      }
    }
  }
  rep.ok = rep.degenerate == 0 && (rep.positive == 0 || rep.negative == 0);
  return rep;
}

// ---------------------------------------------------------------------------
// parameters

std::string group_name(const std::string& prefix, std::size_t unit, const std::string& part) {
  return prefix + "." + std::to_string(unit) + "." + part;
}

namespace {

std::vector<std::string> part_names(const WarpUnit& u) {
  if (std::holds_alternative<AxialWarpUnit>(u)) return {"awu_linear", "awu_sigmoid"};
  if (std::holds_alternative<RbfBlockUnit>(u)) return {"rbf"};
  return {"mobius"};
}

}  // namespace

void register_params(engine::ParamVector& params, const WarpStack& stack, const std::string& prefix,
                     const WarpRates& rates, const std::vector<UnitWeights>* init) {
  const std::vector<UnitWeights> id = stack.identity_weights();
  const std::vector<UnitWeights>& w0 = init != nullptr ? *init : id;
  for (std::size_t k = 0; k < stack.size(); ++k) {
    const WarpUnit& u = stack.units()[k];
    const auto names = part_names(u);
    if (std::holds_alternative<AxialWarpUnit>(u)) {
      params.add(group_name(prefix, k, names[0]), engine::GroupRole::warp, engine::Transform::softplus(),
                 w0[k].parts.at(0), rates.warp);
      params.add(group_name(prefix, k, names[1]), engine::GroupRole::warp, engine::Transform::nonneg(),
                 w0[k].parts.at(1), rates.warp);
    } else if (const auto* r = std::get_if<RbfBlockUnit>(&u)) {
      params.add(group_name(prefix, k, names[0]), engine::GroupRole::warp,
                 engine::Transform::scaled_tanh(r->weight_bound()), w0[k].parts.at(0), rates.warp);
    } else {
      params.add(group_name(prefix, k, names[0]), engine::GroupRole::warp, engine::Transform::identity(),
                 w0[k].parts.at(0), rates.mobius);
    }
  }
}

std::vector<UnitVars> bind_weights(const engine::Binding& binding, const WarpStack& stack, const std::string& prefix) {
  std::vector<UnitVars> out(stack.size());
  for (std::size_t k = 0; k < stack.size(); ++k) {
    for (const auto& n : part_names(stack.units()[k])) out[k].parts.push_back(binding[group_name(prefix, k, n)]);
  }
  return out;
}

std::vector<UnitWeights> weights_from(const engine::ParamVector& params, const WarpStack& stack,
                                      const std::string& prefix) {
  std::vector<UnitWeights> out(stack.size());
  for (std::size_t k = 0; k < stack.size(); ++k) {
    for (const auto& n : part_names(stack.units()[k])) out[k].parts.push_back(params.natural(group_name(prefix, k, n)));
  }
  return out;
}

void set_weights(engine::ParamVector& params, const WarpStack& stack, const std::string& prefix,
                 const std::vector<UnitWeights>& weights) {
  if (weights.size() != stack.size()) throw ConfigError("warp '" + prefix + "': weight count does not match the stack");
  for (std::size_t k = 0; k < stack.size(); ++k) {
    const auto names = part_names(stack.units()[k]);
    if (weights[k].parts.size() != names.size()) throw ConfigError("warp '" + prefix + "': malformed unit weights");
    for (std::size_t j = 0; j < names.size(); ++j) params.set_natural(group_name(prefix, k, names[j]), weights[k].parts[j]);
  }
}

}  // namespace deepwarp::warp
