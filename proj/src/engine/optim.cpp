#include "deepwarp/engine/optim.hpp"

#include <cmath>
#include <iomanip>
#include <limits>

namespace deepwarp::engine {

namespace {

bool is_active(const std::vector<bool>& active, std::size_t i) { return active.empty() || active[i]; }

void check_shapes(const ParamVector& params, const LossValue& gradient) {
  if (gradient.gradient.size() != params.size()) throw std::invalid_argument("gradient does not match parameter groups");
}

}  // namespace

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "gd") return OptimizerKind::gd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "gd"; }

void OptimizerState::init(const ParamVector& params) {
  m.clear();
  v.clear();
  steps.assign(params.size(), 0);
  for (const auto& g : params.groups()) {
    m.push_back(Eigen::VectorXd::Zero(g.raw.size()));
    v.push_back(Eigen::VectorXd::Zero(g.raw.size()));
  }
}

void adam_step(ParamVector& params, OptimizerState& state, const LossValue& gradient, const std::vector<bool>& active,
               double scale, const AdamConfig& config) {
  check_shapes(params, gradient);
  if (state.steps.size() != params.size()) state.init(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_active(active, i)) continue;
    ParamGroup& g = params.group(i);
    const Eigen::VectorXd& grad = gradient.gradient[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad.cwiseAbs2();
    const int t = ++state.steps[i];
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    const Eigen::ArrayXd step =
        (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + config.eps);
    g.raw.array() -= g.learning_rate * scale * step;
  }
  params.project();
}

void gd_step(ParamVector& params, const LossValue& gradient, const std::vector<bool>& active, double scale) {
  check_shapes(params, gradient);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_active(active, i)) continue;
    ParamGroup& g = params.group(i);
    g.raw -= g.learning_rate * scale * gradient.gradient[i];
  }
  params.project();
}

FitResult fit(const LossFn& loss, ParamVector params, const FitConfig& config, const ProgressFn& progress) {
  if (config.nsteps < 0 || config.nsteps_pre < 0) throw ConfigError("nsteps and nsteps_pre must be nonnegative");
  if (!params.admissible()) throw ConfigError("initial parameters are outside their domains");

  FitResult result;
  for (const auto& g : params.groups()) result.group_names.push_back(g.name);

  std::vector<bool> dependence_only(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) dependence_only[i] = params.group(i).role == GroupRole::dependence;

  OptimizerState state;
  state.init(params);
  ParamVector good = params;
  OptimizerState good_state = state;
  LossValue good_grad;
  bool have_good = false;
  int consecutive = 0;
  double scale = 1.0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();

  const auto update = [&](ParamVector& p, OptimizerState& s, const LossValue& g, const std::vector<bool>& active) {
    if (config.optimizer == OptimizerKind::adam) {
      adam_step(p, s, g, active, scale);
    } else {
      gd_step(p, g, active, scale);
    }
    if (!p.admissible()) {
      FitResult partial = result;
      partial.params = have_good ? good : params;
      throw FitAborted("parameter update left the admissible domain", std::move(partial));
    }
  };

  const int total = config.nsteps_pre + config.nsteps;
  for (int k = 0; k < total; ++k) {
    const bool warmup = k < config.nsteps_pre;
    const std::vector<bool> active = warmup ? dependence_only : std::vector<bool>{};
    LossValue lv;
    try {
      lv = grad(loss, params);
      if (!std::isfinite(lv.value) || !lv.flat_gradient().allFinite()) throw NumericalError("non-finite loss or gradient");
    } catch (const NumericalError& e) {
      ++result.failures;
      if (!have_good || ++consecutive >= 3) {
        result.params = have_good ? good : params;
        throw FitAborted(std::string("loss evaluation failed repeatedly: ") + e.what(), std::move(result));
      }
      params = good;
      state = good_state;
      scale *= 0.5;
      update(params, state, good_grad, active);
      continue;
    }
    consecutive = 0;
    scale = 1.0;

    TraceRow row;
    row.step = k + 1;
    row.warmup = warmup;
    row.loss = lv.value;
    for (const auto& g : lv.gradient) row.grad_norms.push_back(g.norm());
    result.trace.push_back(row);
    if (progress && config.log_every > 0 && (k + 1) % config.log_every == 0) progress(row);

    if (config.tolerance > 0.0 && !warmup && std::isfinite(last_loss) &&
        std::abs(lv.value - last_loss) <= config.tolerance * (1.0 + std::abs(lv.value))) {
      result.converged = true;
      break;
    }
    last_loss = lv.value;

    good = params;
    good_state = state;
    good_grad = lv;
    have_good = true;
    update(params, state, lv, active);
  }
  result.params = std::move(params);
  return result;
}

void write_trace_csv(std::ostream& out, const FitResult& result) {
  out << "step,phase,loss";
  for (const auto& n : result.group_names) out << ",grad_norm:" << n;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& r : result.trace) {
    out << r.step << ',' << (r.warmup ? "warmup" : "full") << ',' << r.loss;
    for (double g : r.grad_norms) out << ',' << g;
    out << '\n';
  }
}

}  // namespace deepwarp::engine
