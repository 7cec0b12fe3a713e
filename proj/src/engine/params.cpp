#include "deepwarp/engine/params.hpp"

#include "deepwarp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace deepwarp::engine {

namespace {

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double Transform::to_natural(double raw) const {
  switch (kind) {
    case TransformKind::identity:
      return raw;
    case TransformKind::exp:
      return std::exp(raw);
    case TransformKind::softplus:
      return softplus_value(raw);
    case TransformKind::nonneg:
      return raw;
    case TransformKind::scaled_tanh:
      return bound * std::tanh(raw);
    case TransformKind::scaled_sigmoid:
      return bound * sigmoid_value(raw);
  }
  return raw;
}

double Transform::to_raw(double natural) const {
  if (!admissible(natural)) {
    throw DomainError("value " + std::to_string(natural) + " outside the domain of transform '" + name() + "'");
  }
  switch (kind) {
    case TransformKind::identity:
    case TransformKind::nonneg:
      return natural;
    case TransformKind::exp:
      return std::log(natural);
    case TransformKind::softplus:
      // log(exp(y) - 1), stable for large y
      return natural > 30.0 ? natural + std::log1p(-std::exp(-natural)) : std::log(std::expm1(natural));
    case TransformKind::scaled_tanh:
      return std::atanh(natural / bound);
    case TransformKind::scaled_sigmoid: {
      const double p = natural / bound;
      return std::log(p) - std::log1p(-p);
    }
  }
  return natural;
}

bool Transform::admissible(double natural) const {
  if (!std::isfinite(natural)) return false;
  switch (kind) {
    case TransformKind::identity:
      return true;
    case TransformKind::exp:
    case TransformKind::softplus:
      return natural > 0.0;
    case TransformKind::nonneg:
      return natural >= 0.0;
    case TransformKind::scaled_tanh:
      return std::abs(natural) < bound;
    case TransformKind::scaled_sigmoid:
      return natural > 0.0 && natural < bound;
  }
  return false;
}

double Transform::project(double raw) const {
  if (kind == TransformKind::nonneg) return std::max(raw, 0.0);
  return raw;
}

ad::Var Transform::apply(const ad::Var& raw) const {
  switch (kind) {
    case TransformKind::identity:
    case TransformKind::nonneg:
      return raw;
    case TransformKind::exp:
      return ad::exp(raw);
    case TransformKind::softplus:
      return ad::softplus(raw);
    case TransformKind::scaled_tanh:
      return bound * ad::tanh(raw);
    case TransformKind::scaled_sigmoid:
      return bound * ad::sigmoid(raw);
  }
  return raw;
}

std::string Transform::name() const {
  switch (kind) {
    case TransformKind::identity:
      return "identity";
    case TransformKind::exp:
      return "exp";
    case TransformKind::softplus:
      return "softplus";
    case TransformKind::nonneg:
      return "nonneg";
    case TransformKind::scaled_tanh:
      return "scaled_tanh";
    case TransformKind::scaled_sigmoid:
      return "scaled_sigmoid";
  }
  return "?";
}

Transform Transform::from_name(std::string_view name, double bound) {
  if (name == "identity") return identity();
  if (name == "exp") return exp();
  if (name == "softplus") return softplus();
  if (name == "nonneg") return nonneg();
  if (name == "scaled_tanh") return scaled_tanh(bound);
  if (name == "scaled_sigmoid") return scaled_sigmoid(bound);
  throw ConfigError("unknown parameter transform '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

void ParamVector::add(std::string name, GroupRole role, Transform transform, const Eigen::VectorXd& natural_init,
                      double learning_rate) {
  if (by_name_.count(name) != 0) throw std::invalid_argument("ParamVector: duplicate group '" + name + "'");
  ParamGroup g;
  g.name = name;
  g.role = role;
  g.transform = transform;
  g.learning_rate = learning_rate;
  g.raw.resize(natural_init.size());
  for (Eigen::Index i = 0; i < natural_init.size(); ++i) g.raw(i) = transform.to_raw(natural_init(i));
  by_name_.emplace(std::move(name), groups_.size());
  groups_.push_back(std::move(g));
}

std::size_t ParamVector::total_size() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += static_cast<std::size_t>(g.raw.size());
  return n;
}

std::optional<std::size_t> ParamVector::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamVector::index(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("ParamVector: no group named '" + std::string(name) + "'");
  return *i;
}

Eigen::VectorXd ParamVector::natural(std::size_t i) const {
  const ParamGroup& g = groups_.at(i);
  Eigen::VectorXd out(g.raw.size());
  for (Eigen::Index k = 0; k < g.raw.size(); ++k) out(k) = g.transform.to_natural(g.raw(k));
  return out;
}

Eigen::VectorXd ParamVector::natural(std::string_view name) const { return natural(index(name)); }

double ParamVector::natural_scalar(std::string_view name) const {
  const Eigen::VectorXd v = natural(name);
  if (v.size() != 1) throw std::logic_error("ParamVector: group '" + std::string(name) + "' is not scalar");
  return v(0);
}

void ParamVector::set_natural(std::string_view name, const Eigen::VectorXd& value) {
  ParamGroup& g = groups_.at(index(name));
  if (value.size() != g.raw.size()) throw std::invalid_argument("ParamVector::set_natural: size mismatch");
  for (Eigen::Index k = 0; k < value.size(); ++k) g.raw(k) = g.transform.to_raw(value(k));
}

void ParamVector::set_learning_rate(std::string_view name, double rate) { groups_.at(index(name)).learning_rate = rate; }

Eigen::VectorXd ParamVector::flat_raw() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(total_size()));
  Eigen::Index off = 0;
  for (const auto& g : groups_) {
    out.segment(off, g.raw.size()) = g.raw;
    off += g.raw.size();
  }
  return out;
}

void ParamVector::set_flat_raw(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(total_size())) {
    throw std::invalid_argument("ParamVector::set_flat_raw: size mismatch");
  }
  Eigen::Index off = 0;
  for (auto& g : groups_) {
    g.raw = flat.segment(off, g.raw.size());
    off += g.raw.size();
  }
}

void ParamVector::project() {
  for (auto& g : groups_) {
    for (Eigen::Index k = 0; k < g.raw.size(); ++k) g.raw(k) = g.transform.project(g.raw(k));
  }
}

bool ParamVector::admissible() const {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    const Eigen::VectorXd v = natural(i);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      if (!groups_[i].transform.admissible(v(k))) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

const ad::Var& Binding::operator[](std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw std::out_of_range("Binding: no parameter group '" + std::string(name) + "'");
  return natural_[it->second];
}

bool Binding::contains(std::string_view name) const { return by_name_.count(std::string(name)) != 0; }

Binding bind(ad::Tape& tape, const ParamVector& params) {
  Binding b;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamGroup& g = params.group(i);
    ad::Var raw = tape.variable(ad::Matrix(g.raw));
    b.raw_.push_back(raw);
    b.natural_.push_back(g.transform.apply(raw));
    b.by_name_.emplace(g.name, i);
  }
  return b;
}

Eigen::VectorXd LossValue::flat_gradient() const {
  Eigen::Index n = 0;
  for (const auto& g : gradient) n += g.size();
  Eigen::VectorXd out(n);
  Eigen::Index off = 0;
  for (const auto& g : gradient) {
    out.segment(off, g.size()) = g;
    off += g.size();
  }
  return out;
}

LossValue grad(const LossFn& loss, const ParamVector& params) {
  ad::Tape tape;
  const Binding b = bind(tape, params);
  const ad::Var root = loss(tape, b);
  if (!root.is_scalar()) throw std::logic_error("grad: loss must be 1x1");
  tape.backward(root);
  LossValue out;
  out.value = root.scalar();
  out.gradient.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.gradient.emplace_back(tape.adjoint(b.raw(i)).col(0));
  return out;
}

LossValue grad(const Objective& objective, const ParamVector& params) {
  return grad([&](ad::Tape& t, const Binding& b) { return objective.loss(t, b); }, params);
}

double evaluate(const LossFn& loss, const ParamVector& params) {
  ad::Tape tape;
  const Binding b = bind(tape, params);
  return loss(tape, b).scalar();
}

double evaluate(const Objective& objective, const ParamVector& params) {
  return evaluate([&](ad::Tape& t, const Binding& b) { return objective.loss(t, b); }, params);
}

Eigen::VectorXd finite_difference_gradient(const LossFn& loss, const ParamVector& params, double step) {
  ParamVector work = params;
  const Eigen::VectorXd x0 = params.flat_raw();
  Eigen::VectorXd g(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    Eigen::VectorXd x = x0;
    x(i) = x0(i) + step;
    work.set_flat_raw(x);
    const double fp = evaluate(loss, work);
    x(i) = x0(i) - step;
    work.set_flat_raw(x);
    const double fm = evaluate(loss, work);
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

std::vector<GroupError> gradient_check(const LossFn& loss, const ParamVector& params, double step, double floor) {
  const Eigen::VectorXd g = grad(loss, params).flat_gradient();
  const Eigen::VectorXd fd = finite_difference_gradient(loss, params, step);
  std::vector<GroupError> out;
  Eigen::Index off = 0;
  for (const auto& grp : params.groups()) {
    const Eigen::Index k = grp.raw.size();
    const double err = (g.segment(off, k) - fd.segment(off, k)).norm();
    out.push_back({grp.name, err / std::max(fd.segment(off, k).norm(), floor), err});
    off += k;
  }
  return out;
}

}  // namespace deepwarp::engine
