#include "deepwarp/cli/commands.hpp"

#include "deepwarp/cli/pipeline.hpp"
#include "deepwarp/error.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <optional>
#include <sstream>

namespace deepwarp::cli {

namespace {

struct Options {
  std::string config, data, model, out, pred;
  std::optional<std::uint64_t> seed;
  std::optional<double> risk_quantile;
  int threads = 1;
  bool deterministic = false;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "run configuration (JSON)");
  sub->add_option("--data", o.data, "input CSV");
  sub->add_option("--model", o.model, "model file");
  sub->add_option("--out", o.out, "output path");
  sub->add_option("--seed", o.seed, "random seed (overrides the config)");
  sub->add_option("--threads", o.threads, "worker threads for dense linear algebra");
  sub->add_flag("--deterministic", o.deterministic, "single-threaded, bit-reproducible run");
  sub->add_option("--risk-quantile", o.risk_quantile, "threshold quantile of the risk functional (default 0.95)");
}

const std::string& need(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
  return value;
}

RunConfig config_for(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  resolve(c, o.seed, o.risk_quantile);
  return c;
}

ModelRun load_model(const std::string& path) { return parse_model(io::read_text(path), path); }

void write_trace(const std::string& path, const engine::FitResult& result) {
  std::ostringstream s;
  engine::write_trace_csv(s, result);
  io::write_text_atomic(path, s.str());
}

int cmd_simulate(const Options& o, std::ostream& out) {
  const RunConfig c = config_for(o);
  const std::string& path = need(o.out, "--out");
  const SimulatedData d = simulate(c);
  io::write_text_atomic(path, d.csv);
  io::write_text_atomic(path + ".truth.json", d.truth);
  out << "wrote " << path << " and " << path << ".truth.json\n";
  return kExitOk;
}

int cmd_fit(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = config_for(o);
  const std::string& path = need(o.out, "--out");
  const io::Table data = io::read_csv(need(o.data, "--data"));
  const std::string trace_path = c.trace.empty() ? path + ".trace.csv" : c.trace;
  const engine::ProgressFn progress = [&err](const engine::TraceRow& r) {
    err << "step " << r.step << (r.warmup ? " (warm-up)" : "") << " loss " << r.loss << '\n';
  };
  FitOutput fit;
  try {
    fit = fit_model(c, data, progress);
  } catch (const engine::FitAborted& e) {
    write_trace(trace_path, e.partial());
    throw;
  }
  write_trace(trace_path, fit.result);
  io::write_text_atomic(path, model_json(fit.run));
  const auto& folds = std::visit([](const auto& r) -> const std::vector<FoldSummary>& { return r.folds; }, fit.run);
  for (const auto& f : folds) {
    if (!f.report.ok) {
      err << "warning: fitted " << f.stack << " warp folds (" << f.report.positive << " positive, " << f.report.negative
          << " negative, " << f.report.degenerate << " degenerate cells)\n";
    }
  }
  if (fit.result.failures > 0) err << "warning: recovered from " << fit.result.failures << " failed evaluations\n";
  out << "wrote " << path << " and " << trace_path << '\n';
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const ModelRun model = load_model(need(o.model, "--model"));
  const std::string& path = need(o.out, "--out");
  const io::Table data = io::read_csv(need(o.data, "--data"));
  io::write_text_atomic(path, predict_csv(model, data));
  out << "wrote " << path << '\n';
  return kExitOk;
}

int cmd_summary(const Options& o, std::ostream& out) {
  const ModelRun model = load_model(need(o.model, "--model"));
  const std::string& path = need(o.out, "--out");
  const io::Table data = io::read_csv(need(o.data, "--data"));
  RunConfig c = o.config.empty() ? std::visit([](const auto& r) { return r.config; }, model) : config_for(o);
  const SummaryFiles f = summary_files(model, data, c);
  io::write_text_atomic(path, f.map);
  io::write_text_atomic(path + ".curve.csv", f.curve);
  io::write_text_atomic(path + ".sites.csv", f.sites);
  out << "wrote " << path << ", " << path << ".curve.csv and " << path << ".sites.csv\n";
  return kExitOk;
}

int cmd_score(const Options& o, std::ostream& out) {
  const RunConfig c = config_for(o);
  const io::Table pred = io::read_csv(need(o.pred, "--pred"));
  const io::Table truth = io::read_csv(need(o.data, "--data"));
  const std::string doc = score_json(score_tables(pred, truth, c.response), static_cast<std::size_t>(pred.rows()), c);
  if (o.out.empty()) {
    out << doc;
  } else {
    io::write_text_atomic(o.out, doc);
    out << "wrote " << o.out << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"deepwarp: nonstationary spatial models through learned warpings"};
  app.name("deepwarp");
  app.require_subcommand(1);
  Options o;
  CLI::App* sim = app.add_subcommand("simulate", "simulate a dataset (AWU_RBF_2D, stationary_GP, BR_approx)");
  CLI::App* fit = app.add_subcommand("fit", "fit a model and write the model file and loss trace");
  CLI::App* pred = app.add_subcommand("predict", "kriging predictions from a Gaussian-process model file");
  CLI::App* sum = app.add_subcommand("summary", "dependence maps, warped coordinates and the fitted curve");
  CLI::App* score = app.add_subcommand("score", "RMSPE and CRPS of predictions against held-out truth");
  for (CLI::App* s : {sim, fit, pred, sum, score}) add_common(s, o);
  score->add_option("--pred", o.pred, "predictions CSV (mean, stderr)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (o.threads < 1) throw ConfigError("--threads must be >= 1");
    Eigen::setNbThreads(o.deterministic ? 1 : o.threads);
    if (o.risk_quantile && !(*o.risk_quantile > 0.0 && *o.risk_quantile < 1.0)) {
      throw ConfigError("--risk-quantile must lie in (0, 1)");
    }
    if (sim->parsed()) return cmd_simulate(o, out);
    if (fit->parsed()) return cmd_fit(o, out, err);
    if (pred->parsed()) return cmd_predict(o, out);
    if (sum->parsed()) return cmd_summary(o, out);
    return cmd_score(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnsupportedError& e) {
    err << "unsupported: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace deepwarp::cli
