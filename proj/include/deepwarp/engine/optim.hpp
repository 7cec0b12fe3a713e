#pragma once

// First-order optimizers over a ParamVector and the fitting loop: optional
// dependence-only warm-up, per-group learning rates, loss trace.

#include "deepwarp/engine/params.hpp"
#include "deepwarp/error.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace deepwarp::engine {

enum class OptimizerKind { adam, gd };

OptimizerKind parse_optimizer(std::string_view name);
std::string optimizer_name(OptimizerKind kind);

struct FitConfig {
  int nsteps = 50;
  int nsteps_pre = 0;  // warm-up steps moving dependence groups only
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 1;
  double tolerance = 0.0;  // stop once |loss change| <= tolerance * (1 + |loss|); 0 disables
  int log_every = 0;       // progress callback cadence; 0 disables
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-group moments and step counts; groups that sit out a step keep theirs.
struct OptimizerState {
  std::vector<Eigen::VectorXd> m, v;
  std::vector<int> steps;

  void init(const ParamVector& params);
};

// One update of every group with active[i] true (all when `active` is empty),
// each scaled by its own learning rate times `scale`.
void adam_step(ParamVector& params, OptimizerState& state, const LossValue& gradient,
               const std::vector<bool>& active = {}, double scale = 1.0, const AdamConfig& config = {});
void gd_step(ParamVector& params, const LossValue& gradient, const std::vector<bool>& active = {}, double scale = 1.0);

struct TraceRow {
  int step = 0;
  bool warmup = false;
  double loss = 0.0;
  std::vector<double> grad_norms;  // per group, unconstrained scale
};

struct FitResult {
  ParamVector params;
  std::vector<std::string> group_names;
  std::vector<TraceRow> trace;
  int failures = 0;  // failed evaluations recovered from by step halving
  bool converged = false;
};

// Raised after three consecutive failed loss evaluations or an update that
// leaves the parameter domain; carries the trace so far.
class FitAborted : public NumericalError {
 public:
  FitAborted(const std::string& what, FitResult partial) : NumericalError(what), partial_(std::move(partial)) {}
  const FitResult& partial() const { return partial_; }

 private:
  FitResult partial_;
};

using ProgressFn = std::function<void(const TraceRow&)>;

// Runs nsteps_pre warm-up steps and then nsteps full steps. Each trace row
// records the loss at the parameters the step started from. A failed
// evaluation returns to the last good point and retries with half the step.
FitResult fit(const LossFn& loss, ParamVector params, const FitConfig& config, const ProgressFn& progress = {});

// CSV: step,phase,loss,<group names...> (gradient norms).
void write_trace_csv(std::ostream& out, const FitResult& result);

}  // namespace deepwarp::engine
