#pragma once

// Trainable parameters: named groups, each stored on an unconstrained scale
// and mapped to its natural domain by a constraint transform.

#include "deepwarp/ad/tape.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace deepwarp::engine {

enum class TransformKind {
  identity,
  exp,            // (0, inf)
  softplus,       // (0, inf)
  nonneg,         // [0, inf), enforced by projection after each update
  scaled_tanh,    // (-bound, bound)
  scaled_sigmoid  // (0, bound)
};

struct Transform {
  TransformKind kind = TransformKind::identity;
  double bound = 1.0;

  static Transform identity() { return {}; }
  static Transform exp() { return {TransformKind::exp, 1.0}; }
  static Transform softplus() { return {TransformKind::softplus, 1.0}; }
  static Transform nonneg() { return {TransformKind::nonneg, 1.0}; }
  static Transform scaled_tanh(double bound) { return {TransformKind::scaled_tanh, bound}; }
  static Transform scaled_sigmoid(double bound) { return {TransformKind::scaled_sigmoid, bound}; }

  double to_natural(double raw) const;
  // Inverse map; throws DomainError if `natural` lies outside the domain.
  double to_raw(double natural) const;
  bool admissible(double natural) const;
  double project(double raw) const;
  ad::Var apply(const ad::Var& raw) const;

  std::string name() const;
  static Transform from_name(std::string_view name, double bound);
};

enum class GroupRole { warp, dependence };

struct ParamGroup {
  std::string name;
  GroupRole role = GroupRole::dependence;
  Transform transform;
  Eigen::VectorXd raw;
  double learning_rate = 0.01;
};

class ParamVector {
 public:
  void add(std::string name, GroupRole role, Transform transform, const Eigen::VectorXd& natural_init,
           double learning_rate);

  std::size_t size() const { return groups_.size(); }
  std::size_t total_size() const;
  const ParamGroup& group(std::size_t i) const { return groups_.at(i); }
  ParamGroup& group(std::size_t i) { return groups_.at(i); }
  const std::vector<ParamGroup>& groups() const { return groups_; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index(std::string_view name) const;  // throws if absent
  bool contains(std::string_view name) const { return find(name).has_value(); }

  Eigen::VectorXd natural(std::string_view name) const;
  Eigen::VectorXd natural(std::size_t i) const;
  double natural_scalar(std::string_view name) const;
  void set_natural(std::string_view name, const Eigen::VectorXd& value);
  void set_learning_rate(std::string_view name, double rate);

  Eigen::VectorXd flat_raw() const;
  void set_flat_raw(const Eigen::VectorXd& flat);

  void project();
  bool admissible() const;

 private:
  std::vector<ParamGroup> groups_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

// Natural-scale tape variables for every group.
class Binding {
 public:
  const ad::Var& operator[](std::string_view name) const;
  const ad::Var& natural(std::size_t i) const { return natural_.at(i); }
  const ad::Var& raw(std::size_t i) const { return raw_.at(i); }
  bool contains(std::string_view name) const;
  std::size_t size() const { return natural_.size(); }

 private:
  friend Binding bind(ad::Tape& tape, const ParamVector& params);
  std::vector<ad::Var> raw_;
  std::vector<ad::Var> natural_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

Binding bind(ad::Tape& tape, const ParamVector& params);

// Scalar objective plus its gradient on the unconstrained scale, one vector per group.
struct LossValue {
  double value = 0.0;
  std::vector<Eigen::VectorXd> gradient;

  Eigen::VectorXd flat_gradient() const;
};

using LossFn = std::function<ad::Var(ad::Tape&, const Binding&)>;

class Objective {
 public:
  virtual ~Objective() = default;
  virtual ad::Var loss(ad::Tape& tape, const Binding& params) const = 0;
};

LossValue grad(const LossFn& loss, const ParamVector& params);
LossValue grad(const Objective& objective, const ParamVector& params);
double evaluate(const LossFn& loss, const ParamVector& params);
double evaluate(const Objective& objective, const ParamVector& params);

// Central finite differences on the unconstrained scale (test oracle).
Eigen::VectorXd finite_difference_gradient(const LossFn& loss, const ParamVector& params, double step = 1e-5);

// Per-group comparison of the tape gradient with central differences:
// rel = ||g - fd|| / max(||fd||, floor).
struct GroupError {
  std::string name;
  double rel = 0.0;
  double abs = 0.0;
};

std::vector<GroupError> gradient_check(const LossFn& loss, const ParamVector& params, double step = 1e-5,
                                       double floor = 1e-3);

}  // namespace deepwarp::engine
