#pragma once

// Injective warping units and their composition f = f_L o ... o f_1.
//
// Units hold only fixed hyperparameters; trainable weights live in an
// engine::ParamVector and are passed in at evaluation time. Coordinates are
// expected on the rescaled square [-0.5, 0.5]^d.

#include "deepwarp/ad/tape.hpp"
#include "deepwarp/engine/params.hpp"

#include <Eigen/Dense>

#include <string>
#include <variant>
#include <vector>

namespace deepwarp::warp {

struct AxisRange {
  double lo = -0.5;
  double hi = 0.5;
};

// f(s) = w1 s + sum_{i>=2} w_i sigmoid(b1 (s - c_i)) on axis `dim`.
class AxialWarpUnit {
 public:
  // Centers equally spaced: c_i = lo + (i-1)(hi-lo)/(r-1), i = 2..r.
  AxialWarpUnit(int dim, int r, double steepness, AxisRange lims = {});
  static AxialWarpUnit with_centers(int dim, double steepness, std::vector<double> centers, AxisRange lims = {});

  int dim() const { return dim_; }  // 1-based
  int axis() const { return dim_ - 1; }
  int basis_count() const { return static_cast<int>(centers_.size()) + 1; }
  double steepness() const { return steepness_; }
  const std::vector<double>& centers() const { return centers_; }
  AxisRange lims() const { return lims_; }

  double eval(double s, double linear, const Eigen::VectorXd& sigmoid_weights) const;
  ad::Var apply(const ad::Var& coords, const ad::Var& linear, const ad::Var& sigmoid_weights) const;

 private:
  AxialWarpUnit() = default;

  int dim_ = 1;
  double steepness_ = 1.0;
  std::vector<double> centers_;
  AxisRange lims_;
};

// f(s) = s + sum_c w_c exp(-b |s - c|^2) (s - c) over a 3^res x 3^res grid.
class RbfBlockUnit {
 public:
  explicit RbfBlockUnit(int res);

  int res() const { return res_; }
  int center_count() const { return static_cast<int>(centers_.rows()); }
  const Eigen::MatrixXd& centers() const { return centers_; }
  double spacing() const { return spacing_; }      // 1 / 3^res
  double bandwidth() const { return bandwidth_; }  // 1 / (2 spacing^2)
  double weight_bound() const { return 0.85 * spacing_; }

  Eigen::Vector2d eval(const Eigen::Vector2d& s, const Eigen::VectorXd& weights) const;
  ad::Var apply(const ad::Var& coords, const ad::Var& weights) const;

 private:
  int res_;
  double spacing_;
  double bandwidth_;
  Eigen::MatrixXd centers_;
};

// phi(z) = (w1 z + w2) / (w3 z + w4), z = s1 + i s2. Weights are 8 reals
// (Re w1, Im w1, Re w2, Im w2, Re w3, Im w3, Re w4, Im w4).
class MobiusUnit {
 public:
  static constexpr double kPoleTolerance = 1e-8;

  Eigen::Vector2d eval(const Eigen::Vector2d& s, const Eigen::VectorXd& weights) const;
  ad::Var apply(const ad::Var& coords, const ad::Var& weights) const;

  static Eigen::VectorXd identity_weights();
};

using WarpUnit = std::variant<AxialWarpUnit, RbfBlockUnit, MobiusUnit>;

std::string unit_kind(const WarpUnit& unit);

// Natural-scale weights of one unit: AWU {linear(1), sigmoid(r-1)}, RBF {w}, Moebius {w(8)}.
struct UnitWeights {
  std::vector<Eigen::VectorXd> parts;
};

struct UnitVars {
  std::vector<ad::Var> parts;
};

// Frozen post-unit renormalization ranges: per unit, one range per renormalized axis.
struct Calibration {
  std::vector<std::vector<AxisRange>> units;
};

class WarpStack {
 public:
  WarpStack() = default;
  WarpStack(int input_dim, std::vector<WarpUnit> units, bool renormalize = true);

  int input_dim() const { return input_dim_; }
  const std::vector<WarpUnit>& units() const { return units_; }
  std::size_t size() const { return units_.size(); }
  bool empty() const { return units_.empty(); }
  bool renormalize() const { return renormalize_; }

  // With `frozen` null the renormalization ranges come from the current rows
  // (differentiable min/max) and are written to `record` if given.
  ad::Var forward(const ad::Var& coords, const std::vector<UnitVars>& weights, const Calibration* frozen = nullptr,
                  Calibration* record = nullptr) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& coords, const std::vector<UnitWeights>& weights,
                          const Calibration* frozen = nullptr, Calibration* record = nullptr) const;

  std::vector<UnitWeights> identity_weights() const;

 private:
  int input_dim_ = 2;
  std::vector<WarpUnit> units_;
  bool renormalize_ = true;
};

enum class LayerKind { spatial2d, temporal };

WarpStack default_layers(LayerKind kind, int r = 50, double steepness = 200.0, AxisRange lims = {});

// Per-axis affine map of raw coordinates onto [-0.5, 0.5].
struct Rescaler {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  static Rescaler fit(const Eigen::MatrixXd& coords);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& coords) const;
  // Rows with any rescaled coordinate outside [-0.5, 0.5] (beyond `tol`).
  std::vector<bool> outside(const Eigen::MatrixXd& coords, double tol = 1e-9) const;
};

// Orientation check on a grid x grid lattice of the rescaled domain: every
// warped cell must have a signed area of the same, nonzero, sign.
struct FoldReport {
  bool ok = true;
  int positive = 0;
  int negative = 0;
  int degenerate = 0;
};

FoldReport fold_check(const WarpStack& stack, const std::vector<UnitWeights>& weights, const Calibration& calibration,
                      int grid = 50);

// ---- parameter plumbing ----

struct WarpRates {
  double warp = 0.02;    // AWU and RBF weights
  double mobius = 0.01;  // Moebius coefficients
};

std::string group_name(const std::string& prefix, std::size_t unit, const std::string& part);

// Adds one group per unit part, initialised at `init` (identity if null).
void register_params(engine::ParamVector& params, const WarpStack& stack, const std::string& prefix,
                     const WarpRates& rates, const std::vector<UnitWeights>* init = nullptr);
std::vector<UnitVars> bind_weights(const engine::Binding& binding, const WarpStack& stack, const std::string& prefix);
std::vector<UnitWeights> weights_from(const engine::ParamVector& params, const WarpStack& stack,
                                      const std::string& prefix);
void set_weights(engine::ParamVector& params, const WarpStack& stack, const std::string& prefix,
                 const std::vector<UnitWeights>& weights);

}  // namespace deepwarp::warp
